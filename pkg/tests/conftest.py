from dataclasses import replace

import pytest

import dualdet as d


@pytest.fixture(scope="session")
def default_config() -> d.ExperimentConfig:
    return d.ExperimentConfig()


@pytest.fixture(scope="session")
def default_dataset(default_config):
    specs, _ = default_config.resolve_classes()
    return d.generate_dataset(specs, default_config.dataset)


@pytest.fixture(scope="session")
def default_partition(default_config):
    _, partition = default_config.resolve_classes()
    return partition


@pytest.fixture(scope="session")
def tiny_config() -> d.ExperimentConfig:
    """Small but non-degenerate: fast enough for per-test training."""
    return d.ExperimentConfig(
        dataset=d.SceneConfig(num_scenes=60, objects_per_scene=(10, 25)),
        train=d.TrainConfig(epochs=2, seeds=(1, 2)),
    )


@pytest.fixture(scope="session")
def tiny_dataset(tiny_config):
    specs, _ = tiny_config.resolve_classes()
    return d.generate_dataset(specs, tiny_config.dataset)


@pytest.fixture(scope="session")
def run_cache(default_config, default_dataset):
    """Memoized full-scale runs, shared by the end-to-end tests.

    Keyed by (mode, seed, lambda); lambda None means the default config.
    """
    cache: dict = {}

    def get(mode: str, seed: int, lambda_tail: float | None = None) -> d.RunResult:
        key = (mode, seed, lambda_tail)
        if key not in cache:
            config = default_config
            if lambda_tail is not None:
                config = replace(
                    config, train=replace(config.train, lambda_tail=lambda_tail)
                )
            cache[key] = d.run_single(config, default_dataset, mode, seed)
        return cache[key]

    return get
