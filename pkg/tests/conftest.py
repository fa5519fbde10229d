import pytest

from chainpolicy.codec import build_vocab
from chainpolicy.labeler import build_samples
from chainpolicy.world import (
    generate_human_episode,
    generate_robot_episode,
    make_task,
    scenario_for_task,
)


@pytest.fixture(scope="session")
def put_on_traj():
    task = make_task("put_on", "sushi", "book")
    scenario = scenario_for_task(task, n_distractors=2)
    return generate_robot_episode(scenario, task, 5)


@pytest.fixture(scope="session")
def pick_traj():
    task = make_task("pick", "cup")
    scenario = scenario_for_task(task, n_distractors=2)
    return generate_robot_episode(scenario, task, 3)


@pytest.fixture(scope="session")
def human_traj():
    task = make_task("pick", "bottle")
    scenario = scenario_for_task(task, axis="human_only", n_distractors=2)
    return generate_human_episode(scenario, task, 9)


@pytest.fixture(scope="session")
def robot_samples(put_on_traj, pick_traj):
    return build_samples(put_on_traj) + build_samples(pick_traj)


@pytest.fixture(scope="session")
def human_samples(human_traj):
    return build_samples(human_traj)


@pytest.fixture(scope="session")
def small_vocab(robot_samples, human_samples):
    return build_vocab(robot_samples + human_samples)
