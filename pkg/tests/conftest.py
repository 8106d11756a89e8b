from __future__ import annotations

import time
from contextlib import contextmanager

import numpy as np
import pytest

from adspeech import kernels
from adspeech.audio_io import AudioClip

KERNEL_NAMES = ("zero_crossings", "normalized_autocorr", "best_split", "smo_solve")

BACKENDS = [pytest.param(kernels.python_kernels, id="python")]
if kernels.compiled_kernels is not None:
    BACKENDS.append(pytest.param(kernels.compiled_kernels, id="cython"))
else:
    BACKENDS.append(pytest.param(None, id="cython", marks=pytest.mark.skip("compiled kernels not built")))


@pytest.fixture(params=BACKENDS)
def kernel_backend(request, monkeypatch):
    """Route every kernel call through one backend for the duration of a test."""
    module = request.param
    for name in KERNEL_NAMES:
        monkeypatch.setattr(kernels, name, getattr(module, name))
    monkeypatch.setattr(kernels, "BACKEND", "cython" if module is kernels.compiled_kernels else "python")
    return module


def sine(freq_hz, seconds=1.0, rate=16000, amplitude=0.5, phase=0.0):
    t = np.arange(int(round(seconds * rate))) / rate
    return amplitude * np.sin(2 * np.pi * freq_hz * t + phase)


def clip_of(samples, rate=16000):
    return AudioClip(np.asarray(samples, dtype=np.float64), rate)


@pytest.fixture(scope="session")
def synthetic_corpus(tmp_path_factory):
    from adspeech.synthetic import generate_corpus

    root = tmp_path_factory.mktemp("corpus")
    manifests = generate_corpus(root, n_clips=20, seed=7, n_test=4)
    return root, manifests


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Context manager that times one acceptance criterion and records a PASS/FAIL line.

    The block fails if it raises or runs past ``limit_s``; either way the line
    is printed and kept for the end-of-run summary.
    """

    @contextmanager
    def run(number: int, title: str, limit_s: float | None = None):
        start = time.perf_counter()
        status, detail = "FAIL", ""
        try:
            yield
            elapsed = time.perf_counter() - start
            if limit_s is not None and elapsed >= limit_s:
                detail = f"took {elapsed:.2f} s, limit {limit_s:g} s"
                raise AssertionError(detail)
            status = "PASS"
            detail = f"{elapsed:.2f} s" + (f" (limit {limit_s:g} s)" if limit_s is not None else "")
        except BaseException as exc:
            detail = detail or f"{type(exc).__name__}: {exc}".splitlines()[0]
            raise
        finally:
            line = f"criterion {number}: {status} {title} [{detail}]"
            print(line)
            request.config.stash[ACCEPTANCE_KEY].append(line)

    return run
