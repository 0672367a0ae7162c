import json
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from dextra.kinematics import bundled_model

settings.register_profile(
    "repo", deadline=None, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

REPO_ROOT = Path(__file__).resolve().parents[1]
SCENES_DIR = REPO_ROOT / "scenes"
MODELS_DIR = REPO_ROOT / "src" / "dextra" / "models"


@pytest.fixture(scope="session")
def robot_model():
    return bundled_model("inspire-like-6dof")


@pytest.fixture(scope="session")
def human_model():
    return bundled_model("human-20dof")


@pytest.fixture(scope="session")
def robot_doc():
    with open(MODELS_DIR / "inspire-like-6dof.json", encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture()
def scenes_dir():
    return SCENES_DIR


@pytest.fixture()
def mug_scene():
    return SCENES_DIR / "mug-01"


@pytest.fixture()
def fragile_dir():
    return SCENES_DIR / "fragile"
