"""Metrics page: evaluation reports appended by the ``eval`` stage."""

from pathlib import Path

import pandas as pd
import streamlit as st

from vugen import plotting_utils
from vugen import runs
from vugen.metrics import load_reports

st.session_state["active_page"] = "metrics"

st.title("Evaluation Reports")

st.markdown(
    """
    Each report scores generated images against validation images in the
    frozen encoder's feature space:

    - **eFID**: Fréchet distance of the feature Gaussians (lower is better)
    - **Density / Coverage**: kNN-ball fidelity and mode coverage (x100)
    - **Precision / Recall**: kNN-manifold companions (fractions)
    - **Alignment**: prompt-alignment score from the trained proxy scorer
    """
)

st.divider()

run_root = Path(st.session_state.get("run_root", "runs/default"))
metrics_path = run_root / runs.REPORTS_DIR / "metrics.jsonl"

if not metrics_path.is_file():
    st.error("No reports found. Run `vugen eval --config <path>` for this run directory first.")
    st.stop()

reports = load_reports(metrics_path)
table = pd.DataFrame([r.to_dict() for r in reports])
st.dataframe(table, use_container_width=True)

# Latest report per system for the comparison charts
latest = {r.system: r for r in reports}

col1, col2 = st.columns(2)
with col1:
    st.pyplot(plotting_utils.plot_metric_bar_chart({n: r.efid for n, r in latest.items()}, "eFID"))
with col2:
    st.pyplot(plotting_utils.plot_metric_bar_chart({n: r.alignment for n, r in latest.items()}, "alignment"))

col3, col4 = st.columns(2)
with col3:
    st.pyplot(plotting_utils.plot_metric_bar_chart({n: r.density for n, r in latest.items()}, "density", reference=100.0))
with col4:
    st.pyplot(plotting_utils.plot_metric_bar_chart({n: r.coverage for n, r in latest.items()}, "coverage", reference=100.0))

st.caption("Dashed line: the value a sample set matching the real distribution would score.")
