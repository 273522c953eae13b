"""Scaling-law measurements from token corpora and loss curves."""

import json as _json

from . import _core
from ._core import (
    ConfigError,
    ConvergenceError,
    DataError,
    Error,
    Vocabulary,
    __version__,
    data_threshold,
    decode,
    default_config,
    encode,
    horizon,
    operator_norm,
    predict_alpha,
    read_token_stream,
    train_bpe,
    validate_loss_csv,
    write_token_stream,
)


def covariance_summary(ids, vocab_size, lags, cross_documents=False):
    """Per-lag operator and Frobenius norms of the token covariance."""
    return _json.loads(_core.covariance_summary(ids, vocab_size, list(lags), cross_documents))


def fit_power_law(x, y, weights=None, lo=None, hi=None):
    return _json.loads(_core.fit_power_law(list(x), list(y), weights, lo, hi))


def fit_asymptote(x, y, step=0.01, min_ratio=10.0, threshold=0.0):
    return _json.loads(_core.fit_asymptote(list(x), list(y), step, min_ratio, threshold))


def fit_broken_power_law(x, y):
    return _json.loads(_core.fit_broken_power_law(list(x), list(y)))


def classify_regime(gamma, beta, delta):
    return _json.loads(_core.classify_regime(gamma, beta, delta))


def synthesize_curves(ansatz):
    """Loss-curve CSV text for an ansatz given as a dict."""
    return _core.synthesize_curves(_json.dumps(ansatz))


def ansatz_autoregressive_loss(ansatz, P, T):
    return _core.ansatz_autoregressive_loss(_json.dumps(ansatz), P, T)


def collapse(csv, gamma, beta, bins=32):
    return _json.loads(_core.collapse(csv, gamma, beta, bins))


def exponent_scan(csv, gammas, betas, bins=32):
    return _json.loads(_core.exponent_scan(csv, list(gammas), list(betas), bins))


def generate(spec):
    """Synthetic token ids and vocabulary size for a generator spec dict."""
    return _core.generate(_json.dumps(spec))


def run_job(verb, params, config=None):
    return _json.loads(_core.run_job(verb, _json.dumps(params), config))


def run_recorded(verb, params, config=None, manifest=None):
    return _json.loads(_core.run_recorded(verb, _json.dumps(params), config, manifest))


def selftest(manifest):
    ok, mismatches = _core.selftest(str(manifest))
    return ok, mismatches
