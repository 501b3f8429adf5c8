"""Streamlit landing page for browsing finished VUGEN runs.

Picks the run directory every other page reads from and lists the stages
that have written a manifest there. Nothing here starts or steers training;
stages run through the ``vugen`` CLI.
"""

import streamlit as st

from vugen import runs

# -------- PAGE CONFIG --------
st.set_page_config(
    page_title="VUGEN Desk-Scale Results",
    layout="wide",
)

st.session_state["active_page"] = "home"

# -------- HEADER / TITLE --------
st.title("VUGEN Desk-Scale Results Browser")
st.markdown(
    """
    Images are generated in the **dimension-reduced latent space of a frozen
    understanding encoder**, then decoded to pixels by a diffusion decoder.
    This browser shows what the pipeline stages and sweeps wrote to a run
    directory: sample grids, metric reports and sweep tables.
    """
)

with st.container():
    st.subheader("Pipeline")
    st.markdown(
        """
        1. **build-data / pretrain-encoder**: toy shapes corpus, frozen encoder and alignment scorer
        2. **train-decoder**: reducer + pixel (or latent) diffusion decoder
        3. **train-generator / train-baseline**: rectified-flow generators (VUGEN, decoupled, REPA)
        4. **sample / eval / sweep**: images, eFID / density / coverage / alignment, experiment sweeps
        """
    )

st.divider()

st.subheader("Run Directory")

run_root = st.text_input("Run directory", value=st.session_state.get("run_root", "runs/default"))
st.session_state["run_root"] = run_root

manifests = runs.list_stage_manifests(run_root)
if not manifests:
    st.info("No stage manifests found yet. Run a stage with `vugen <stage> --config <path>` first.")
else:
    st.dataframe(runs.manifest_table(manifests), use_container_width=True)

st.caption("Use the pages in the sidebar to browse samples, metric reports and sweeps.")
