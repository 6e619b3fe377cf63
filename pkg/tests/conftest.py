import numpy as np

from qconsensus import (
    ConsensusConfig,
    LinkFailureModel,
    QuantizerSpec,
    WeightSequence,
    complete_graph,
    path_graph,
)


def k5_config(max_iter=100_000, delta=0.5, levels=None, b=None, weights=None):
    return ConsensusConfig(
        x0=np.arange(1.0, 6.0),
        model=LinkFailureModel.fixed(complete_graph(5)),
        weights=weights or WeightSequence(a=0.25, tau=1.0),
        quantizer=QuantizerSpec(delta, levels),
        max_iter=max_iter,
        b=b,
    )


def p3_config(max_iter=1000, x0=(1.0, -1.0, 1.0), b=None, model=None):
    return ConsensusConfig(
        x0=np.asarray(x0),
        model=model or LinkFailureModel.fixed(path_graph(3)),
        weights=WeightSequence(a=0.1, tau=1.0),
        quantizer=QuantizerSpec(1.0),
        max_iter=max_iter,
        b=b,
    )


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[2:])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
