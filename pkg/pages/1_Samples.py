"""Samples page: generated images written by the ``sample`` stage.

Shows the captioned grid for each system that has samples in the selected
run directory, rebuilt from the lossless per-sample PNGs.
"""

from pathlib import Path

import cv2
import numpy as np
import streamlit as st

from vugen import runs
from vugen import plotting_utils

st.session_state["active_page"] = "samples"

st.title("Generated Samples")

run_root = Path(st.session_state.get("run_root", "runs/default"))
samples_root = run_root / runs.SAMPLES_DIR

if not samples_root.is_dir():
    st.error("No samples found. Run `vugen sample --config <path>` for this run directory first.")
    st.stop()

systems = sorted(p.name for p in samples_root.iterdir() if p.is_dir())
if not systems:
    st.error("The samples directory is empty.")
    st.stop()

system = st.selectbox("System", systems)
sample_dir = samples_root / system

manifest = runs.list_stage_manifests(run_root).get("sample", {})
prompt = manifest.get("prompt", "")
st.caption(f"Prompt: **{prompt or '(unconditional)'}**")

paths = sorted(sample_dir.glob("sample_*.png"))
if not paths:
    st.info("No per-sample images in this directory.")
    st.stop()

# PNGs are BGR uint8; the grid helper expects RGB in [-1, 1]
images = np.stack([cv2.cvtColor(cv2.imread(str(p)), cv2.COLOR_BGR2RGB) for p in paths]).astype(np.float32) / 127.5 - 1.0
st.pyplot(plotting_utils.plot_image_grid(images, captions=[p.stem for p in paths]))

st.divider()

st.subheader("Individual Samples")
cols = st.columns(8)
for i, path in enumerate(paths):
    with cols[i % len(cols)]:
        st.image(str(path), caption=path.stem, width=96)
