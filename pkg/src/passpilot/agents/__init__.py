from passpilot.agents.actor_critic import (
    ActorCritic,
    AgentConfig,
    actor_loss,
    critic_loss,
    lambda_returns,
)
from passpilot.agents.policies import LatentPolicy, SequencePolicy, UniformPolicy, policy_rollout
from passpilot.agents.search import SearchBudget, SearchResult, guided_search, random_search
from passpilot.agents.value import (
    CoreSet,
    OracleSimulator,
    coreset_select,
    greedy_coreset,
    sequence_value,
    value_predict,
)

__all__ = [
    "ActorCritic", "AgentConfig", "CoreSet", "LatentPolicy", "OracleSimulator", "SearchBudget",
    "SearchResult", "SequencePolicy", "UniformPolicy", "actor_loss", "coreset_select",
    "critic_loss", "greedy_coreset", "guided_search", "lambda_returns", "policy_rollout",
    "random_search", "sequence_value", "value_predict",
]
