import pytest
import torch

from vugen.ema import EmaState, ema_step, ema_update, init_ema
from vugen.errors import ShapeError, ValidationError


def _params(value):
    return {"w": torch.full((3,), float(value), dtype=torch.float64)}


def test_closed_form_recurrence():
    d, n = 0.9, 100
    state = init_ema(_params(0.0), d)
    thetas = [float(i % 7) for i in range(1, n + 1)]
    for theta in thetas:
        state = ema_update(state, _params(theta))
    expected = sum((1 - d) * d ** (n - i) * theta for i, theta in enumerate(thetas, start=1))
    assert float(state.shadow["w"][0]) == pytest.approx(expected, abs=1e-6)


def test_decay_extremes():
    state = init_ema(_params(1.0), 0.0)
    assert torch.equal(ema_update(state, _params(5.0)).shadow["w"], _params(5.0)["w"])
    state = init_ema(_params(1.0), 1.0)
    assert torch.equal(ema_update(state, _params(5.0)).shadow["w"], _params(1.0)["w"])


def test_shadow_tracks_raw_weights_before_activation():
    state = init_ema(_params(0.0), 0.5, activation_step=2)
    state = ema_step(state, _params(4.0), step=0)
    assert float(state.shadow["w"][0]) == 4.0
    state = ema_step(state, _params(8.0), step=2)
    assert float(state.shadow["w"][0]) == 6.0


def test_invalid_decay_and_shapes():
    with pytest.raises(ValidationError):
        EmaState({}, 1.5)
    state = init_ema(_params(0.0), 0.5)
    with pytest.raises(ShapeError):
        ema_update(state, {"w": torch.zeros(4, dtype=torch.float64)})
    with pytest.raises(ShapeError):
        ema_update(state, {"v": torch.zeros(3, dtype=torch.float64)})
