import argparse
import logging
import sys

from src.configs.profile_manager import ProfileManager, read_flat_config
from src.core.data_handler import DataHandler
from src.core.diagnostics import DEFAULT_TOLERANCE, run_gradcheck_suite
from src.core.errors import ReidError
from src.core.evaluator import evaluate_checkpoint
from src.core.external_datasets import build_manifest
from src.core.oracles import run_metric_trials, run_mining_trials
from src.core.synthetic import SyntheticSpec, generate_synthetic
from src.core.trainer import Trainer, TrainConfig
from src.ui.plot_manager import PlotManager

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


class ReidCommandLine:
    """Argument parsing and dispatch for every subcommand."""

    def __init__(self):
        self.data_handler = DataHandler()
        self.profile_manager = ProfileManager()
        self.parser = self.create_parser()

    def create_parser(self):
        parser = argparse.ArgumentParser(prog="reid", description="Multi-task pyramid transformer re-identification")
        parser.add_argument("--verbose", action="store_true", help="debug logging")
        parser.add_argument("--quiet", action="store_true", help="warnings only, no progress bar")
        commands = parser.add_subparsers(dest="command", required=True)

        gen = commands.add_parser("gen", help="render the synthetic dataset")
        gen.add_argument("--spec", help="flat key = value synthetic spec (defaults if omitted)")
        gen.add_argument("--out", required=True)
        gen.add_argument("--workers", type=int, default=1)
        gen.set_defaults(handler=self.cmd_gen)

        train = commands.add_parser("train", help="train from a manifest")
        train.add_argument("--config", help="flat key = value run config (desk profile if omitted)")
        train.add_argument("--data", required=True, help="manifest CSV")
        train.add_argument("--out", required=True)
        train.set_defaults(handler=self.cmd_train)

        evaluate = commands.add_parser("eval", help="evaluate a checkpoint")
        evaluate.add_argument("--ckpt", required=True)
        evaluate.add_argument("--data", required=True, help="manifest CSV")
        evaluate.add_argument("--out", required=True)
        evaluate.add_argument("--config", help="run config overriding the one stored in the checkpoint")
        evaluate.add_argument("--split", choices=["test", "sanity"], default="test")
        evaluate.add_argument("--svg", action="store_true", help="also write cmc.svg")
        evaluate.add_argument("--chance-trials", type=int, default=0, help="label-shuffle chance estimate")
        evaluate.add_argument("--batch-size", type=int, default=32)
        evaluate.add_argument("--workers", type=int, default=1)
        evaluate.set_defaults(handler=self.cmd_eval)

        gradcheck = commands.add_parser("gradcheck", help="central-difference gradient checks")
        gradcheck.add_argument("--op", action="append", help="check name; repeatable, all if omitted")
        gradcheck.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
        gradcheck.set_defaults(handler=self.cmd_gradcheck)

        oracle = commands.add_parser("oracle-metrics", help="compare metrics and mining with brute force")
        oracle.add_argument("--trials", type=int, default=200)
        oracle.add_argument("--seed", type=int, default=0)
        oracle.set_defaults(handler=self.cmd_oracle)

        plot = commands.add_parser("plot-log", help="plot loss curves from train_log.csv")
        plot.add_argument("--log", required=True)
        plot.add_argument("--out", required=True)
        plot.add_argument("--profile", default=None, help="palette source profile")
        plot.set_defaults(handler=self.cmd_plot_log)

        manifest = commands.add_parser("build-manifest", help="manifest from train/query/gallery folders")
        manifest.add_argument("--root", required=True)
        manifest.set_defaults(handler=self.cmd_build_manifest)

        profiles = commands.add_parser("profiles", help="list configuration profiles")
        profiles.set_defaults(handler=self.cmd_profiles)
        return parser

    def set_status(self, message):
        """Report a user-facing status line."""
        logger.info(message)

    def configure_logging(self, args):
        level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
        logging.basicConfig(level=level, format=LOG_FORMAT, force=True)

    def load_config(self, path):
        profile = self.profile_manager.load_run_config(path) if path else self.profile_manager.resolve()
        return TrainConfig.from_profile(profile), profile

    def cmd_gen(self, args):
        spec = SyntheticSpec.from_dict(read_flat_config(args.spec)) if args.spec else SyntheticSpec()
        manifest = generate_synthetic(spec, args.out, workers=args.workers)
        self.set_status(f"Generated {len(manifest)} images in {args.out}")
        return 0

    def cmd_train(self, args):
        config, _ = self.load_config(args.config)
        self.data_handler.load_manifest(args.data)
        trainer = Trainer(config, self.data_handler, args.out, progress=not args.quiet)
        last = trainer.train()
        self.set_status(f"Training finished; final checkpoint {last}")
        return 0

    def cmd_eval(self, args):
        config, profile = self.load_config(args.config) if args.config else (None, None)
        palette = (profile or self.profile_manager.resolve())["plot"]
        self.data_handler.load_manifest(args.data)
        metrics = evaluate_checkpoint(
            args.ckpt, self.data_handler, args.out, config=config, split=args.split, svg=args.svg,
            palette=palette, batch_size=args.batch_size, workers=args.workers, chance_trials=args.chance_trials,
        )
        print(f"Rank-1 {metrics['rank1']:.4f}  Rank-5 {metrics['rank5']:.4f}  mAP {metrics['mAP']:.4f}")
        return 0

    def cmd_gradcheck(self, args):
        results = run_gradcheck_suite(args.op, tolerance=args.tolerance)
        for result in results:
            status = "ok" if result.passed else "FAIL"
            print(f"{result.name:<20} {result.max_rel_error:.2e}  {status}")
        return 0 if all(r.passed for r in results) else 1

    def cmd_oracle(self, args):
        metric_bad, metric_total = run_metric_trials(args.trials, seed=args.seed)
        mining_bad, mining_total = run_mining_trials(args.trials, seed=args.seed)
        print(f"metrics: {metric_total - metric_bad}/{metric_total} agree")
        print(f"mining:  {mining_total - mining_bad}/{mining_total} agree")
        return 0 if metric_bad == 0 and mining_bad == 0 else 1

    def cmd_plot_log(self, args):
        profile = self.profile_manager.resolve({"profile": args.profile} if args.profile else {})
        path = PlotManager(profile["plot"]).save_loss_curves(args.log, args.out)
        self.set_status(f"Wrote {path}")
        return 0

    def cmd_build_manifest(self, args):
        path, manifest = build_manifest(args.root)
        self.set_status(f"Wrote {path} ({len(manifest)} images)")
        return 0

    def cmd_profiles(self, args):
        for name in self.profile_manager.get_profile_names():
            print(f"{name}: {self.profile_manager.get_profile(name).get('description', '')}")
        return 0

    def run(self, argv=None):
        args = self.parser.parse_args(argv)
        self.configure_logging(args)
        try:
            return args.handler(args)
        except ReidError as e:
            logger.error("%s", e)
            return 1


def main(argv=None):
    return ReidCommandLine().run(argv)


if __name__ == "__main__":
    sys.exit(main())
