"""Seedable simulator of learning-driven computation offloading for
energy-harvesting IoT devices, with federated training, a centralized
baseline, a myopic greedy baseline and an exact knapsack oracle."""

from .sysmodel import (
    DeviceEnv,
    EnergyArrival,
    EpochOutcome,
    JointAction,
    NetworkState,
    SystemParams,
    UtilityWeights,
)
from .ddqn import DDQNAgent, ReplayBuffer, Transition
from .federation import FederationConfig, RoundReport
from .baselines import FrozenScenario, KnapsackInstance
from .simctl import ExperimentConfig, load_config, run

__version__ = "0.1.0"

__all__ = [
    "DeviceEnv", "EnergyArrival", "EpochOutcome", "JointAction",
    "NetworkState", "SystemParams", "UtilityWeights", "DDQNAgent",
    "ReplayBuffer", "Transition", "FederationConfig", "RoundReport",
    "FrozenScenario", "KnapsackInstance", "ExperimentConfig", "load_config",
    "run", "__version__",
]
