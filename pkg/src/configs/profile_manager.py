import copy
import json
import logging
import os
from pathlib import Path

from src.core.errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_PROFILE = "desk"
SEED_ENV = "REID_SEED"


def parse_value(text):
    """Flat-config scalar or comma-separated list: int, float, bool or string."""
    text = text.strip()
    if "," in text:
        return [parse_value(part) for part in text.split(",") if part.strip()]
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def read_flat_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are ignored."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    values = {}
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{number}: empty key")
        if key in values:
            raise ConfigError(f"{path}:{number}: duplicate key {key!r}")
        values[key] = parse_value(value)
    return values


class ProfileManager:
    """Named configuration profiles stored as JSON in ``definitions/``."""

    def __init__(self, profile_dir=None):
        self.profiles = {}
        self.profile_dir = Path(profile_dir) if profile_dir else Path(__file__).parent / "definitions"
        self.profile_dir.mkdir(parents=True, exist_ok=True)
        self.load_profiles()

    def load_profiles(self):
        """Load all profile definitions from the profiles directory."""
        for profile_file in sorted(self.profile_dir.glob("*.json")):
            try:
                with open(profile_file, "r") as f:
                    profile = json.load(f)
                self.profiles[profile["name"]] = profile
            except (OSError, ValueError, KeyError) as e:
                logger.error("Error loading profile %s: %s", profile_file, e)

    def get_profile(self, name):
        """Deep copy of a profile; raises for unknown names."""
        if name not in self.profiles:
            raise ConfigError(f"Unknown profile {name!r}; available: {', '.join(self.get_profile_names())}")
        return copy.deepcopy(self.profiles[name])

    def get_profile_names(self):
        return sorted(self.profiles)

    def create_profile(self, profile):
        """Store a new profile next to the built-in ones."""
        if "name" not in profile:
            raise ConfigError("Profile must have a name")
        profile_file = self.profile_dir / f"{profile['name'].lower().replace(' ', '_')}.json"
        with open(profile_file, "w") as f:
            json.dump(profile, f, indent=4)
        self.profiles[profile["name"]] = profile
        return profile

    def resolve(self, overrides=None, env=None):
        """
        Merge flat ``section.key`` overrides into the profile they name
        (``profile = <name>``, default desk). ``REID_SEED`` wins over both.
        """
        overrides = dict(overrides or {})
        profile = self.get_profile(overrides.pop("profile", DEFAULT_PROFILE))
        for dotted, value in overrides.items():
            section, _, key = dotted.partition(".")
            if not key or section not in profile or not isinstance(profile[section], dict):
                raise ConfigError(f"Unknown config key: {dotted}")
            if key not in profile[section]:
                raise ConfigError(f"Unknown config key: {dotted}")
            profile[section][key] = value

        env = os.environ if env is None else env
        if env.get(SEED_ENV):
            try:
                profile["train"]["seed"] = int(env[SEED_ENV])
            except ValueError as e:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from e
            logger.info("Seed overridden by %s: %s", SEED_ENV, profile["train"]["seed"])
        return profile

    def load_run_config(self, path, env=None):
        return self.resolve(read_flat_config(path), env=env)
