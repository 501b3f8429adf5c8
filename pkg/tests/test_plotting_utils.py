import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from vugen.plotting_utils import plot_image_grid, plot_metric_bar_chart, plot_metric_curves, to_uint8


def test_to_uint8_maps_range_endpoints():
    out = to_uint8(np.array([-1.0, 0.0, 1.0, 2.0]))
    assert out.tolist() == [0, 128, 255, 255]


def test_curves_draw_one_line_per_group():
    table = pd.DataFrame(
        {"system": ["vugen", "vugen", "decoupled", "decoupled"], "step": [1, 2, 1, 2], "efid": [4.0, 3.0, 5.0, 4.5]}
    )
    fig = plot_metric_curves(table, "step", "efid", group="system")
    assert len(fig.axes[0].lines) == 2
    plt.close(fig)


def test_empty_bar_chart_says_so():
    fig = plot_metric_bar_chart({}, "eFID")
    assert fig.axes[0].texts[0].get_text() == "No results available"
    plt.close(fig)


def test_image_grid_hides_unused_cells():
    fig = plot_image_grid(np.zeros((5, 8, 8, 3)), ["a"] * 5, ncols=4)
    assert len(fig.axes) == 8
    assert sum(bool(ax.images) for ax in fig.axes) == 5
    plt.close(fig)
