"""Sweeps page: tables, plots and directional checks of each experiment sweep."""

import json
from pathlib import Path

import pandas as pd
import streamlit as st

from vugen import runs

st.session_state["active_page"] = "sweeps"

st.title("Experiment Sweeps")

run_root = Path(st.session_state.get("run_root", "runs/default"))
sweeps_root = run_root / runs.SWEEPS_DIR

kinds = sorted(p.name for p in sweeps_root.glob("*") if (p / "summary.json").is_file()) if sweeps_root.is_dir() else []
if not kinds:
    st.error("No finished sweeps found. Run `vugen sweep --config <path>` for this run directory first.")
    st.stop()

kind = st.selectbox("Sweep", kinds)
sweep_dir = sweeps_root / kind
summary = json.loads((sweep_dir / "summary.json").read_text())

# -----------------------------------
# Directional checks
# -----------------------------------
st.subheader("Directional Checks")
checks = summary.get("checks", {})
if not checks:
    st.info("This sweep records no directional checks.")
for name, ok in checks.items():
    (st.success if ok else st.warning)(f"{name}: {'met' if ok else 'not met'}")

if "best_scale" in summary:
    st.markdown(
        f"Best CFG scale: **{summary['best_scale']['efid']:g}** for eFID, "
        f"**{summary['best_scale']['alignment']:g}** for alignment."
    )

st.caption(f"config hash `{summary.get('config_hash', '')[:12]}` · code hash `{summary.get('code_hash', '')[:12]}`")

st.divider()

# -----------------------------------
# Tables and plots
# -----------------------------------
st.subheader("Rows")
st.dataframe(pd.read_csv(sweep_dir / "rows.csv"), use_container_width=True)

curves = sweep_dir / "curves.csv"
if curves.is_file():
    st.subheader("Training Curves")
    st.dataframe(pd.read_csv(curves), use_container_width=True)

plots = sorted(sweep_dir.glob("*.png"))
cols = st.columns(2)
for i, path in enumerate(plots):
    with cols[i % 2]:
        st.image(str(path), caption=path.stem.replace("_", " "))
