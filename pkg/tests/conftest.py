import copy

import pytest
import torch

from freqdgt.gradcheck import check_gradients


def randomize(module, seed, scale=0.7):
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * scale)


def float32_grad_errors(module64, probe, inputs64, keep=None):
    """Relative error of float32 autograd gradients against float64 central differences.

    ``probe(module, *inputs)`` returns a scalar.
    """
    module32 = copy.deepcopy(module64).float()
    inputs32 = [x.float() for x in inputs64]
    grads32 = torch.autograd.grad(probe(module32, *inputs32), list(module32.parameters()),
                                  allow_unused=True)
    errors = {}
    for (name, p64), g32 in zip(module64.named_parameters(), grads32):
        if keep is not None and not keep(name):
            continue
        g32 = torch.zeros_like(p64) if g32 is None else g32.double()
        rep = check_gradients(lambda: probe(module64, *inputs64), [(name, p64)], 1e-6, 1.0,
                              corrupt=lambda _n, _g, g32=g32: g32)
        errors[name] = rep[0].max_rel_err
    return errors


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_cohort_dir(tmp_path_factory):
    """Feature directory of the default synthetic cohort, generated once per session."""
    from freqdgt.config import SynthConfig
    from freqdgt.features import featurize_dataset
    from freqdgt.synth import generate_cohort

    root = tmp_path_factory.mktemp("default_cohort")
    featurize_dataset(generate_cohort(SynthConfig(), root / "raw"), root / "features")
    return root / "features"


@pytest.fixture(scope="session")
def default_cohort(default_cohort_dir):
    from freqdgt.data import Manifest
    from freqdgt.harness import TrialSet

    return TrialSet.from_manifest(Manifest.load(default_cohort_dir))
