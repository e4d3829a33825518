import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from src.configs.profile_manager import DEFAULT_PROFILE, ProfileManager  # noqa: E402
from src.core.errors import ConfigError  # noqa: E402

logger = logging.getLogger(__name__)

LOSS_SERIES = ["total", "softmax", "triplet", "camid", "center"]


class PlotManager:
    """Writes themed SVG figures: CMC curves and training loss curves."""

    def __init__(self, palette=None):
        if palette is None:
            palette = ProfileManager().get_profile(DEFAULT_PROFILE)["plot"]
        self.current_theme = palette

    def _new_axes(self):
        fig, ax = plt.subplots(figsize=(6, 4))
        self.apply_theme(fig, ax)
        return fig, ax

    def apply_theme(self, fig, ax):
        """Apply theme colours to figure, axes, grid, ticks and spines."""
        theme = self.current_theme
        fig.set_facecolor(theme["bg"])
        ax.set_facecolor(theme["bg"])
        ax.grid(True, color=theme["grid"], linestyle="--", alpha=0.5)
        ax.tick_params(colors=theme["text"])

        for spine in ax.spines.values():
            spine.set_color(theme["text"])

        ax.xaxis.label.set_color(theme["text"])
        ax.yaxis.label.set_color(theme["text"])
        ax.title.set_color(theme["text"])

    def _finish(self, fig, ax, path):
        if ax.get_legend_handles_labels()[0]:
            ax.legend(facecolor=self.current_theme["bg"], labelcolor=self.current_theme["text"])
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(path, format="svg", facecolor=fig.get_facecolor(), bbox_inches="tight")
        except OSError as e:
            raise ConfigError(f"Cannot write figure {path}: {e}") from e
        finally:
            plt.close(fig)
        logger.debug("Wrote %s", path)
        return path

    def save_cmc(self, cmc, mAP, path):
        """CMC curve over ranks 1..K with mAP in the title."""
        fig, ax = self._new_axes()
        ranks = range(1, len(cmc) + 1)
        ax.plot(ranks, cmc, color=self.current_theme["accent"], marker="o", markersize=3, label="CMC")
        ax.set_xlabel("Rank")
        ax.set_ylabel("Matching rate")
        ax.set_ylim(0.0, 1.02)
        ax.set_title(f"CMC (Rank-1 {cmc[0]:.3f}, mAP {mAP:.3f})")
        ax.title.set_color(self.current_theme["text"])
        return self._finish(fig, ax, path)

    def save_loss_curves(self, log_path, path, series=None):
        """Per-step loss components from a training log CSV."""
        log = pd.read_csv(log_path)
        series = series or LOSS_SERIES
        missing_columns = [col for col in ["step", *series] if col not in log.columns]
        if missing_columns:
            raise ConfigError(f"Missing required columns: {', '.join(missing_columns)}")

        fig, ax = self._new_axes()
        colors = self.current_theme["series_colors"]
        for i, name in enumerate(series):
            ax.plot(log["step"], log[name], color=colors[i % len(colors)], linewidth=1.2, label=name)
        ax.set_xlabel("Step")
        ax.set_ylabel("Loss")
        ax.set_title("Training losses")
        ax.title.set_color(self.current_theme["text"])
        return self._finish(fig, ax, path)
