"""About page describing the pipeline, the metrics and the desk-scale limits."""

import streamlit as st

st.session_state["active_page"] = "about"

st.title("About This Project & Methods")

st.markdown(
    r"""
### Purpose
This project reproduces, at desk scale, the idea of **generating images inside
the latent space of a frozen visual-understanding encoder** instead of a
separately trained VAE latent space. The understanding features are first
reduced in channel dimension, a flow model learns to sample them from text,
and a pixel-space diffusion decoder renders them.

---

### Pipeline

1. **Toy corpus**
   - 32 x 32 images of up to three colored shapes on a plain background.
   - Captions come from a fixed grammar, e.g. *"red circle at left and blue square at right"*.

2. **Frozen understanding encoder**
   - A small patch transformer trained on attribute and per-patch color probes, then frozen.
   - Its 8 x 8 grid of D-dimensional patch features is the understanding latent.

3. **Dimension reducer + decoder**
   - PCA (frozen) or a jointly trained MLP maps D channels to D / r.
   - The pixel diffusion decoder (a small U-ViT) is trained with a flow loss,
     a frozen-encoder perceptual loss and a feature-alignment term.

4. **Generator (Mixture of Transformers)**
   - A frozen causal text tower and a trainable generation tower share one
     attention sequence: text attends causally, latent tokens attend to all text
     and to each other.
   - Trained with rectified flow on standardized reduced latents:

   $$
   z_t = t\,z + (1 - t)\,\epsilon, \qquad
   \mathcal{L} = \lVert v_\theta(z_t, t, c) - (z - \epsilon) \rVert^2
   $$

   - Sampling integrates the velocity field with Euler steps under
     classifier-free guidance $v = v_u + s\,(v_c - v_u)$.

---

### Baselines

| System | Sample space | Extra loss |
|--------|--------------|------------|
| **VUGEN** | reduced understanding latents | none |
| **Decoupled** | tiny VAE latents | none |
| **REPA** | tiny VAE latents | align a middle layer with encoder features |

All three share tower shapes, optimizer, step budget and sampler; the run
refuses to compare systems whose shared configuration hashes differ.

---

### Metrics

| Metric | Meaning | Better |
|--------|---------|--------|
| **eFID** | Fréchet distance of encoder-feature Gaussians | lower |
| **Density** | how many real kNN balls contain each sample (x100) | ~100 |
| **Coverage** | share of real kNN balls containing a sample (x100) | higher |
| **Alignment** | proxy prompt-image score from a contrastive scorer | higher |

---

### Desk-Scale Limits

- Images are 32 x 32 and the encoder is tiny; absolute numbers are not
  comparable to large-scale results, only the directions of the comparisons.
- eFID uses this project's own encoder features, not an Inception network.
- Intermediate checkpoints are scored on 1,024 samples, so curve points are noisy.

---

### Libraries

| Library | Purpose |
|--------|----------|
| PyTorch / einops | networks and training |
| NumPy / SciPy | PCA and metric linear algebra |
| pandas | sweep tables |
| OpenCV | rasterizing the corpus, PNG output |
| Matplotlib | static plots |
| safetensors / OmegaConf | checkpoints and strict configs |
| Streamlit | this results browser |
"""
)
