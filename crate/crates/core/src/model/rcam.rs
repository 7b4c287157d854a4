//! Skip connections: identity for the soma model, residual cross-attention
//! modules for the prompted branch model.

use crate::error::{shape_err, Result};
use crate::nn::{zero_param, Builder, LayerNorm, Mlp, MultiHeadAttention};
use crate::params::ParamStore;
use crate::tensor::{Graph, Var};

/// The soma model's skip: features pass through untouched.
pub fn identity_skip(features: Var) -> Var {
    features
}

/// One residual cross-attention module for a pyramid level of width `C`.
///
/// With prompts `P`, image tokens `I` and their positional embeddings:
///
/// ```text
/// P1 = P  + LN1(Attn(P + Pp,  P + Pp,  P))
/// P2 = P1 + LN2(Attn(P1 + Pp, I + Ip,  I))
/// P3 = P2 + MLP(P2)
/// I' = I  + LN4(Attn(I + Ip,  P3 + Pp, P3))
/// ```
///
/// `Attn(q, k, v)` is multi-head attention with queries `q`. The layer norms
/// sit on the residual branch, so a branch that outputs zero leaves its input
/// unchanged.
#[derive(Clone, Debug)]
pub struct Rcam {
    pub self_attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub prompt_to_image: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
    pub image_to_prompt: MultiHeadAttention,
    pub norm4: LayerNorm,
}

impl Rcam {
    pub fn new(b: &mut Builder, name: &str, dim: usize, heads: usize, mlp_ratio: usize) -> Result<Self> {
        Ok(Self {
            self_attn: MultiHeadAttention::new(b, &format!("{name}.self_attn"), dim, heads)?,
            norm1: LayerNorm::new(b, &format!("{name}.norm1"), dim)?,
            prompt_to_image: MultiHeadAttention::new(b, &format!("{name}.prompt_to_image"), dim, heads)?,
            norm2: LayerNorm::new(b, &format!("{name}.norm2"), dim)?,
            mlp: Mlp::new(b, &format!("{name}.mlp"), dim, dim * mlp_ratio)?,
            image_to_prompt: MultiHeadAttention::new(b, &format!("{name}.image_to_prompt"), dim, heads)?,
            norm4: LayerNorm::new(b, &format!("{name}.norm4"), dim)?,
        })
    }

    /// Refine `image` (`[M, C]`) with `prompts` (`[N, C]`); returns `[M, C]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, image: Var, prompts: Var, image_pe: Var, prompt_pe: Var) -> Result<Var> {
        let (si, sp) = (g.shape(image).to_vec(), g.shape(prompts).to_vec());
        if si.len() != 2 || sp.len() != 2 || si[1] != sp[1] {
            return Err(shape_err("rcam", format!("image {si:?} vs prompts {sp:?}")));
        }
        if g.shape(image_pe) != si.as_slice() || g.shape(prompt_pe) != sp.as_slice() {
            return Err(shape_err(
                "rcam",
                format!("positional embeddings {:?}/{:?} for {si:?}/{sp:?}", g.shape(image_pe), g.shape(prompt_pe)),
            ));
        }
        let (p, i) = (prompts, image);
        let pq = g.add(p, prompt_pe)?;
        let a = self.self_attn.forward(g, store, pq, pq, p)?;
        let a = self.norm1.forward(g, store, a)?;
        let p1 = g.add(p, a)?;

        let ik = g.add(i, image_pe)?;
        let q = g.add(p1, prompt_pe)?;
        let a = self.prompt_to_image.forward(g, store, q, ik, i)?;
        let a = self.norm2.forward(g, store, a)?;
        let p2 = g.add(p1, a)?;

        let m = self.mlp.forward(g, store, p2)?;
        let p3 = g.add(p2, m)?;

        let k = g.add(p3, prompt_pe)?;
        let a = self.image_to_prompt.forward(g, store, ik, k, p3)?;
        let a = self.norm4.forward(g, store, a)?;
        g.add(i, a)
    }

    /// Zero every residual branch's output (value and output projections,
    /// second MLP layer, layer-norm affine) so the module becomes the identity.
    pub fn collapse(&self, store: &mut ParamStore) {
        for attn in [&self.self_attn, &self.prompt_to_image, &self.image_to_prompt] {
            attn.v.zero(store);
            attn.out.zero(store);
        }
        self.mlp.fc2.zero(store);
        for norm in [&self.norm1, &self.norm2, &self.norm4] {
            zero_param(store, norm.bias);
        }
    }
}
