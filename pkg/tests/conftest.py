import numpy as np
import pytest

from ealstm.cells import CellParameters, parameter_shapes


def random_params(variant, hidden, dynamic_dim, static_dim, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    shapes = parameter_shapes(variant, hidden, dynamic_dim, static_dim)
    arrays = {k: rng.normal(0.0, scale, size=s) for k, s in shapes.items()}
    return CellParameters(variant, hidden, dynamic_dim, static_dim, arrays, seed)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ------------------------------------------------- shared synthetic experiment

SYNTH_SEEDS = tuple(range(1, 9))


@pytest.fixture(scope="session")
def synthetic_experiment():
    """Eight synthetic basins, eight EA-LSTM seeds and one plain LSTM, trained once per session."""
    import time

    from ealstm.config import TrainingConfig
    from ealstm.data import SYNTHETIC_SPLIT, standardize, synth_basins
    from ealstm.training import train

    raw = synth_basins(8, seed=0)
    std, stats = standardize(raw, SYNTHETIC_SPLIT)
    config = TrainingConfig(hidden_size=32, sequence_length=30, dropout=0.0, epochs=20, learning_rate=1e-2,
                            batch_size=256, seeds=list(SYNTH_SEEDS),
                            train_period=[str(d) for d in SYNTHETIC_SPLIT.train],
                            validation_period=[str(d) for d in SYNTHETIC_SPLIT.validation])
    started = time.time()
    ealstm = {s: train(std, config, seed=s)[0] for s in SYNTH_SEEDS}
    lstm = train(std, config.replace(variant="lstm"), seed=1)[0]
    return {"raw": raw, "std": std, "stats": stats, "config": config, "split": SYNTHETIC_SPLIT,
            "ealstm": ealstm, "lstm": lstm, "train_seconds": time.time() - started}


# --------------------------------------------------- acceptance report lines

ACCEPTANCE = {}


def record_criterion(name, ok, detail):
    ACCEPTANCE.setdefault(name, []).append((bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[name]
        ok = all(p[0] for p in parts)
        terminalreporter.write_line(f"{name} {'PASS' if ok else 'FAIL'}: " + "; ".join(p[1] for p in parts))
