"""fMRI-to-image reconstruction toolkit.

Thin wrapper over the C++ core. The heavy lifting (clustering, tokenization,
training, generation, metrics) lives in the compiled `_brainit` module; this
package adds JSON config helpers and a console entry point.
"""

import json
import sys

try:
    from . import _brainit as _core  # installed wheel layout
except ImportError:  # build-tree layout: module sits on PYTHONPATH
    import _brainit as _core

ArgumentError = _core.ArgumentError
ConfigError = _core.ConfigError
CapabilityError = _core.CapabilityError

synthetic_dataset = _core.synthetic_dataset
fit_clusters = _core.fit_clusters
brain_tokens = _core.brain_tokens
invert_features = _core.invert_features
pixcorr = _core.pixcorr
ssim = _core.ssim
evaluate = _core.evaluate
run = _core.run


def validate_config(config=None, toy=False):
    """Validate a run config (dict or JSON string); returns the full dict."""
    if config is None:
        raw = ""
    elif isinstance(config, str):
        raw = config
    else:
        raw = json.dumps(config)
    return json.loads(_core.validate_config(raw, toy))


def default_config(toy=False):
    return validate_config({}, toy)


def main(argv=None):
    """Console entry point; mirrors the `brainit` binary."""
    return _core.run(list(sys.argv[1:] if argv is None else argv))


__all__ = [
    "ArgumentError",
    "CapabilityError",
    "ConfigError",
    "brain_tokens",
    "default_config",
    "evaluate",
    "fit_clusters",
    "invert_features",
    "main",
    "pixcorr",
    "run",
    "ssim",
    "synthetic_dataset",
    "validate_config",
]
