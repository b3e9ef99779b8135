import numpy as np
import pytest

from cloudmpc.controller import CnmpcProblem, solve
from cloudmpc.dynamics import AgentState


@pytest.fixture(scope="session", autouse=True)
def jit_warmup():
    # one tiny solve compiles every numeric kernel up front so the timed
    # tests measure the algorithms, not the JIT
    problem = CnmpcProblem(horizon_steps=2, sampling_time=0.05, agent_count=2)
    hover = AgentState(position=np.array([0.0, 0.0, 2.0]))
    other = AgentState(position=np.array([3.0, 0.0, 2.0]))
    refs = np.zeros((2, 3, 9))
    refs[0, :, :3] = (0.0, 0.0, 2.0)
    refs[1, :, :3] = (3.0, 0.0, 2.0)
    solve(problem, [hover, other], refs)
