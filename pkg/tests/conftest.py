import json
from pathlib import Path

import pytest

from taskbot.gateway import ScriptedBackend, ScriptedOutput
from taskbot.orchestrator import Budgets, Orchestrator
from taskbot.taskgraph import load_catalog, load_task

REPO_ROOT = Path(__file__).resolve().parent.parent
CATALOG_DIR = REPO_ROOT / "data" / "catalog"
DATA_DIR = Path(__file__).resolve().parent / "data"


@pytest.fixture(scope="session")
def catalog():
    return load_catalog(CATALOG_DIR)


@pytest.fixture(scope="session")
def salad(catalog):
    return next(t for t in catalog if t.id == "salad-cucumber-radish-seaweed")


@pytest.fixture(scope="session")
def stroganoff(catalog):
    return next(t for t in catalog if "stroganoff" in t.id)


@pytest.fixture(scope="session")
def salmon(catalog):
    return next(t for t in catalog if "salmon" in t.id)


@pytest.fixture(scope="session")
def christmas_pasta(catalog):
    return next(t for t in catalog if "christmas" in t.id)


@pytest.fixture(scope="session")
def metrics_golden():
    return json.loads((DATA_DIR / "metrics_golden.json").read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def wote_fixture():
    return json.loads((DATA_DIR / "wote_fixture.json").read_text(encoding="utf-8"))


def make_task(
    task_id="t-1",
    title="test task",
    description="a task for tests.",
    domain="cooking",
    steps=("step one.", "step two."),
    requirements=(("flour", "1 cup"),),
    source_url=None,
):
    return load_task(
        {
            "id": task_id,
            "title": title,
            "description": description,
            "domain": domain,
            "steps": list(steps),
            "requirements": [
                {"name": name, "quantity_text": qty} for name, qty in requirements
            ],
            "source_url": source_url,
        }
    )


def scripted(*texts, delay_ms=0, loop=False):
    return ScriptedBackend(
        [ScriptedOutput(text, delay_ms) for text in texts], loop=loop
    )


def echo_fallback(loop_text="Happy to help with cooking and DIY!"):
    return scripted(loop_text, loop=True)


def make_orchestrator(
    catalog,
    ndp=None,
    fallback=None,
    qa=None,
    adaptation=None,
    budgets=None,
    **kwargs,
):
    from taskbot.gateway import RuleNDPBackend

    backends = {
        "ndp": ndp or RuleNDPBackend(),
        "fallback": fallback or echo_fallback(),
        "qa": qa or scripted("cook until golden", loop=True),
        "adaptation": adaptation or scripted("{}", loop=True),
    }
    return Orchestrator(
        catalog=catalog,
        backends=backends,
        budgets=budgets or Budgets(),
        **kwargs,
    )
