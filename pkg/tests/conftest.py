import numpy as np
import pytest
import torch

torch.set_num_threads(1)

# filled by the acceptance tests, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def central_difference(f, x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Numerical gradient of scalar ``f`` at ``x`` by central differences."""
    x = x.detach().clone()
    grad = torch.zeros_like(x)
    flat, gflat = x.view(-1), grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            hi = float(f(x))
            flat[i] = orig - eps
            lo = float(f(x))
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * eps)
    return grad


def analytic_gradient(f, x: torch.Tensor) -> torch.Tensor:
    x = x.detach().clone().requires_grad_(True)
    f(x).backward()
    return x.grad.detach()


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    return float((a - b).norm() / max(a.norm(), b.norm(), 1e-30))


@pytest.fixture(scope="session")
def toy_corpus():
    from charvoc.data import make_corpus

    return make_corpus(500, seed=0, prefix="train"), make_corpus(100, seed=1000003, prefix="eval")


@pytest.fixture(scope="session")
def trained_recognizer(toy_corpus):
    """Recogniser fitted on the 500-utterance toy corpus (about a minute)."""
    from charvoc.asr_ctc import CTCRecognizer
    from charvoc.training import train_recognizer

    torch.manual_seed(0)
    model = CTCRecognizer()
    return train_recognizer(model, toy_corpus[0], steps=800, seed=0)


@pytest.fixture(scope="session")
def small_triplets():
    """A handful of triplets from an untrained recogniser, for mechanics tests."""
    from charvoc.asr_ctc import CTCRecognizer, freeze
    from charvoc.data import PseudoCodecConfig, build_triplets, make_corpus

    torch.manual_seed(0)
    recog = freeze(CTCRecognizer())
    utts = make_corpus(12, seed=5)
    triplets, failures = build_triplets(utts, recog, PseudoCodecConfig())
    assert not failures
    return triplets, recog


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
