"""
config_manager.py — Hydra composition for sdelbo run and check configs.

A config module is an importable package whose directory holds YAML files;
``sdelbo.configs`` is the bundled one, with ``train/`` run configs, ``check/``
property suites and the shared ``base/`` pieces they compose. Configs are
addressed by their path relative to that directory without the extension
(``"train/smoke"``), and every file must declare ``# @package _global_`` so
placement is stated in the defaults list rather than implied by the path.

Composed configs pass through one pipeline: Hydra overrides, a dict merge,
``$SDE_ELBO_SEED`` and interpolation. A config given by path rather than by
name goes through :func:`load_file`, and :func:`config_hash` fingerprints
the result for checkpoints and error messages.
"""

from __future__ import annotations

import hashlib
import os
import types
from pathlib import Path

from hydra import compose, initialize_config_dir
from hydra.core.global_hydra import GlobalHydra
from hydra.utils import instantiate
from omegaconf import DictConfig, OmegaConf

SEED_ENV_VAR = "SDE_ELBO_SEED"
PACKAGE_HEADER = "# @package _global_"

Overrides = dict | DictConfig | None


class ConfigValidationError(Exception):
    """A config file or composed config is malformed.

    The message names the offending file or key and says how to fix it.
    """


def _module_dir(config_module: types.ModuleType) -> Path:
    if not isinstance(config_module, types.ModuleType):
        raise TypeError(
            f"ConfigManager needs an imported module, got {type(config_module).__name__}; "
            "pass e.g. `sdelbo.configs` after importing it."
        )
    package_path = getattr(config_module, "__path__", None)
    if package_path:
        return Path(list(package_path)[0]).resolve()
    if getattr(config_module, "__file__", None):
        return Path(config_module.__file__).resolve().parent
    raise TypeError(f"Module {config_module.__name__!r} has no location on disk.")


class ConfigManager:
    """Lists, validates, composes and instantiates the YAML files of a config module.

    Args:
        config_module: Imported package whose directory is the Hydra search
            root.

    Raises:
        TypeError: If *config_module* is not a module with a location on disk.

    Examples:
        The bundled configs::

            import sdelbo.configs
            from sdelbo.config_manager import ConfigManager

            CM = ConfigManager(sdelbo.configs)
            CM.list_configs()                         # ["base/net", ..., "train/swiss_roll"]
            run = CM.get_config("train/smoke", param_overrides=["train.iters=10"])
            check = CM.build("check/gap", key="check")
    """

    def __init__(self, config_module: types.ModuleType) -> None:
        self._root = _module_dir(config_module)

    @classmethod
    def for_directory(cls, path: str | Path) -> ConfigManager:
        """A manager over a plain directory, used for configs outside any package.

        Raises:
            FileNotFoundError: If *path* is not a directory.
        """
        root = Path(path).resolve()
        if not root.is_dir():
            raise FileNotFoundError(f"Config directory {root} does not exist.")
        manager = cls.__new__(cls)
        manager._root = root
        return manager

    @property
    def config_dir(self) -> Path:
        return self._root

    def path_of(self, config_name: str) -> Path:
        """YAML file behind *config_name*.

        Raises:
            FileNotFoundError: Naming the config and listing what exists.
        """
        path = self._root / f"{config_name}.yaml"
        if not path.is_file():
            raise FileNotFoundError(
                f"No config '{config_name}' under {self._root}; "
                f"known configs: {self.list_configs()}"
            )
        return path

    def list_configs(self) -> list[str]:
        """Every YAML file under the root as a forward-slash name, sorted."""
        paths = self._root.rglob("*.yaml")
        names = (p.relative_to(self._root).with_suffix("").as_posix() for p in paths)
        return sorted(names)

    def validate(self, config_name: str | None = None) -> None:
        """Check the package header of one config, or of all of them.

        Raises:
            ConfigValidationError: For the first file without the header.
            FileNotFoundError: If *config_name* does not exist.
        """
        for name in self.list_configs() if config_name is None else [config_name]:
            path = self.path_of(name)
            if PACKAGE_HEADER not in path.read_text(encoding="utf-8"):
                raise ConfigValidationError(
                    f"Config '{name}' ({path}) lacks the '{PACKAGE_HEADER}' header; "
                    "add it as the first line so its keys compose at the root."
                )

    def get_config(
        self,
        config_name: str,
        *,
        config_overrides: Overrides = None,
        param_overrides: list[str] | None = None,
    ) -> DictConfig:
        """Compose *config_name* and return it fully resolved.

        Args:
            config_name: Name relative to the config root, e.g. ``"check/fk"``.
            config_overrides: Mapping merged over the composed config; may add
                keys.
            param_overrides: Hydra override strings such as
                ``["train.lr=0.01", "seed=3"]``.

        Raises:
            FileNotFoundError: If *config_name* does not exist.
            ConfigValidationError: If ``$SDE_ELBO_SEED`` is not an integer.
            omegaconf.errors.InterpolationResolutionError: If an interpolation
                points at a missing key.
        """
        self.path_of(config_name)
        # Hydra keeps one global session; another manager may own it.
        GlobalHydra.instance().clear()
        with initialize_config_dir(config_dir=str(self._root), version_base=None):
            cfg = compose(config_name=config_name, overrides=list(param_overrides or []))
        if config_overrides is not None:
            OmegaConf.set_struct(cfg, False)
            cfg = OmegaConf.merge(cfg, config_overrides)
        apply_seed_override(cfg)
        OmegaConf.resolve(cfg)
        return cfg

    def get_raw_config(
        self,
        config_name: str,
        *,
        config_overrides: Overrides = None,
        param_overrides: list[str] | None = None,
    ) -> str:
        """:meth:`get_config` rendered as YAML, as written next to run outputs."""
        cfg = self.get_config(
            config_name, config_overrides=config_overrides, param_overrides=param_overrides
        )
        return OmegaConf.to_yaml(cfg)

    def build(
        self,
        config_name: str,
        *,
        key: str | None = None,
        config_overrides: Overrides = None,
        param_overrides: list[str] | None = None,
    ) -> object:
        """Instantiate the composed config, or only its *key* subtree.

        Check configs keep the suite under ``check`` beside the run seed, so
        ``build("check/fk", key="check")`` returns an ``FkCheck``.

        Raises:
            FileNotFoundError: If *config_name* does not exist.
            ConfigValidationError: If *key* is absent from the composed config.
            hydra.errors.InstantiationException: If a ``_target_`` fails to build.
        """
        cfg = self.get_config(
            config_name, config_overrides=config_overrides, param_overrides=param_overrides
        )
        if key is None:
            return instantiate(cfg)
        node = OmegaConf.select(cfg, key)
        if node is None:
            raise ConfigValidationError(f"Config '{config_name}' has no '{key}' section.")
        return instantiate(node)


def load_file(path: str | Path, overrides: list[str] | None = None) -> DictConfig:
    """Compose a config given by file path, searching its own directory.

    Raises:
        FileNotFoundError: If *path* is not a file; the message names it.
        ConfigValidationError: If the file lacks the package header.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Config file {path} does not exist.")
    manager = ConfigManager.for_directory(path.parent)
    manager.validate(path.stem)
    return manager.get_config(path.stem, param_overrides=overrides)


def apply_seed_override(cfg: DictConfig) -> None:
    """Replace ``cfg.seed`` with ``$SDE_ELBO_SEED`` in place when the variable is set."""
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None or "seed" not in cfg:
        return
    try:
        seed = int(raw)
    except ValueError as exc:
        raise ConfigValidationError(
            f"{SEED_ENV_VAR}={raw!r} is not an integer seed. Unset it or set an integer."
        ) from exc
    OmegaConf.update(cfg, "seed", seed, force_add=True)


def config_hash(cfg: DictConfig) -> str:
    """First 12 hex chars of the sha256 of the resolved YAML."""
    text = OmegaConf.to_yaml(cfg, resolve=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]
