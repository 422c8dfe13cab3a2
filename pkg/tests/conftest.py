import numpy as np
import pytest

from oareorder.digital_twin import TrainConfig, build_dataset, train
from oareorder.link_model import ChannelPlan, FiberSpan, LinkSpec, OAConfig

ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


def record(criterion: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[criterion] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split()[0])):
        passed, detail = ACCEPTANCE_RESULTS[name]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")


@pytest.fixture
def link():
    return LinkSpec()


@pytest.fixture
def plan():
    return ChannelPlan()


@pytest.fixture
def transparent(link):
    return OAConfig.uniform(link.n_oa, 16.0)


def small_link(n_spans: int) -> LinkSpec:
    return LinkSpec(spans=tuple(FiberSpan() for _ in range(n_spans)))


@pytest.fixture(scope="session")
def quick_model():
    """Briefly trained surrogate on the default link; accuracy is not the point."""
    link, plan = LinkSpec(), ChannelPlan()
    ds = build_dataset(link, plan, 300, np.random.default_rng(5))
    model, _ = train(ds, TrainConfig(max_epochs=30, seed=1), n_batches=plan.n_batches)
    return model
