//! One-step generator architectures.
//!
//! Both map a latent draw to a sample in data space in a single forward
//! pass. The MLP variant is the expressive default; the scale/location
//! variant reparameterizes a fixed-weight Gaussian mixture and therefore has
//! a closed-form clean marginal, which unlocks analytic density ratios,
//! analytic fake scores, and exact stationarity checks.

use autodiff_nn::{
    forward_mlp, matrix, mlp_leaves, row, Activation, DetRng, Gradients, MlpNodes, MlpSpec,
    NodeId, ParamStore, Tape, Tensor, TimeEmbedding,
};
use sde_teacher::gmm::Component;
use sde_teacher::GaussianMixtureDensity;

use crate::config::GeneratorArch;
use crate::EngineError;

/// Variance floor for the scale/location marginal, so a transiently
/// collapsed scale still yields a valid (if sharply peaked) density.
const MIN_MARGINAL_VAR: f64 = 1e-12;

/// A generator architecture bound to concrete latent and data dimensions.
#[derive(Debug, Clone)]
pub struct Generator {
    latent_dim: usize,
    data_dim: usize,
    model: Model,
}

#[derive(Debug, Clone)]
enum Model {
    Mlp(MlpSpec),
    ScaleLoc { components: usize },
}

/// Tape handles for one generator evaluation, aligned with the parameter
/// store's flat order.
pub struct GeneratorNodes {
    kind: NodesKind,
}

enum NodesKind {
    Mlp(MlpNodes),
    /// `[comp0.scale, comp0.loc, comp1.scale, ...]`.
    ScaleLoc(Vec<NodeId>),
}

impl Generator {
    pub fn new(
        arch: &GeneratorArch,
        latent_dim: usize,
        data_dim: usize,
    ) -> Result<Self, EngineError> {
        let model = match arch {
            GeneratorArch::Mlp { hidden } => Model::Mlp(MlpSpec::new(
                latent_dim,
                vec![*hidden, *hidden],
                data_dim,
                Activation::Tanh,
                TimeEmbedding::None,
            )?),
            GeneratorArch::ScaleLoc { components } => {
                if latent_dim != data_dim {
                    return Err(EngineError::Config(format!(
                        "scale_loc generator needs latent_dim == data dim, \
                         got {latent_dim} vs {data_dim}"
                    )));
                }
                Model::ScaleLoc { components: *components }
            }
        };
        Ok(Self { latent_dim, data_dim, model })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    fn components(&self) -> usize {
        match self.model {
            Model::Mlp(_) => 1,
            Model::ScaleLoc { components } => components,
        }
    }

    /// Fresh parameters: Gaussian layers for the MLP; unit scale and zero
    /// location (the identity map on latents) for scale/location.
    pub fn init_params(&self, rng: &mut DetRng) -> ParamStore {
        match &self.model {
            Model::Mlp(spec) => ParamStore::init_mlp(spec, rng),
            Model::ScaleLoc { components } => {
                let mut pairs = Vec::with_capacity(2 * components);
                for k in 0..*components {
                    pairs.push((format!("comp{k}.scale"), vec![1.0; self.data_dim]));
                    pairs.push((format!("comp{k}.loc"), vec![0.0; self.data_dim]));
                }
                ParamStore::from_segments(pairs).expect("generated names are unique")
            }
        }
    }

    /// Standard-normal latents plus uniform component picks.
    pub fn draw_latents(&self, n: usize, rng: &mut DetRng) -> (Tensor, Vec<usize>) {
        let mut z = Tensor::zeros((n, self.latent_dim));
        rng.fill_normal(z.as_slice_mut().expect("freshly allocated tensors are contiguous"));
        let k = self.components();
        let picks = (0..n).map(|_| if k == 1 { 0 } else { rng.below(k) }).collect();
        (z, picks)
    }

    /// Plain forward pass: `(B, latent) -> (B, data)`.
    pub fn forward_values(
        &self,
        params: &ParamStore,
        z: &Tensor,
        picks: &[usize],
    ) -> Result<Tensor, EngineError> {
        self.check_inputs(z, picks)?;
        match &self.model {
            Model::Mlp(spec) => {
                Ok(autodiff_nn::forward_mlp_values(spec, params, z, None)?)
            }
            Model::ScaleLoc { components } => {
                let mut out = Tensor::zeros((z.nrows(), self.data_dim));
                for i in 0..z.nrows() {
                    let (s, l) = self.component_params(params, picks[i].min(components - 1))?;
                    for d in 0..self.data_dim {
                        out[(i, d)] = z[(i, d)] * s[d] + l[d];
                    }
                }
                Ok(out)
            }
        }
    }

    /// Differentiable forward pass. Returns the parameter handles (for
    /// gradient collection) and the output node.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        z: &Tensor,
        picks: &[usize],
        requires_grad: bool,
    ) -> Result<(GeneratorNodes, NodeId), EngineError> {
        self.check_inputs(z, picks)?;
        match &self.model {
            Model::Mlp(spec) => {
                let nodes = mlp_leaves(tape, spec, params, requires_grad)?;
                let zc = tape.constant(z.clone());
                let out = forward_mlp(tape, spec, &nodes, zc, None)?;
                Ok((GeneratorNodes { kind: NodesKind::Mlp(nodes) }, out))
            }
            Model::ScaleLoc { components } => {
                let zc = tape.constant(z.clone());
                let mut leaves = Vec::with_capacity(2 * components);
                let mut acc: Option<NodeId> = None;
                for k in 0..*components {
                    let (s, l) = self.component_params(params, k)?;
                    let s_leaf = tape.leaf(row(s), requires_grad);
                    let l_leaf = tape.leaf(row(l), requires_grad);
                    leaves.push(s_leaf);
                    leaves.push(l_leaf);
                    let scaled = tape.mul(zc, s_leaf);
                    let shifted = tape.add(scaled, l_leaf);
                    let term = if *components == 1 {
                        shifted
                    } else {
                        let mut mask = Tensor::zeros((z.nrows(), 1));
                        for (i, &p) in picks.iter().enumerate() {
                            if p == k {
                                mask[(i, 0)] = 1.0;
                            }
                        }
                        let mask = tape.constant(mask);
                        tape.mul(shifted, mask)
                    };
                    acc = Some(match acc {
                        None => term,
                        Some(a) => tape.add(a, term),
                    });
                }
                Ok((
                    GeneratorNodes { kind: NodesKind::ScaleLoc(leaves) },
                    acc.expect("component count validated > 0"),
                ))
            }
        }
    }

    /// Draw `n` samples (a latent draw followed by a value forward pass).
    pub fn sample(
        &self,
        params: &ParamStore,
        n: usize,
        rng: &mut DetRng,
    ) -> Result<Tensor, EngineError> {
        let (z, picks) = self.draw_latents(n, rng);
        self.forward_values(params, &z, &picks)
    }

    /// Closed-form clean output density. Only the scale/location model has
    /// one; asking for the MLP's is a configuration error.
    pub fn clean_marginal(
        &self,
        params: &ParamStore,
    ) -> Result<GaussianMixtureDensity, EngineError> {
        match &self.model {
            Model::Mlp(_) => Err(EngineError::Config(
                "the MLP generator has no closed-form marginal; use the scale_loc \
                 generator for analytic modes"
                    .into(),
            )),
            Model::ScaleLoc { components } => {
                let w = 1.0 / *components as f64;
                let mut comps = Vec::with_capacity(*components);
                for k in 0..*components {
                    let (s, l) = self.component_params(params, k)?;
                    comps.push(Component {
                        weight: w,
                        mean: l.to_vec(),
                        diag_cov: s.iter().map(|v| (v * v).max(MIN_MARGINAL_VAR)).collect(),
                    });
                }
                Ok(GaussianMixtureDensity::new(comps)?)
            }
        }
    }

    fn component_params<'a>(
        &self,
        params: &'a ParamStore,
        k: usize,
    ) -> Result<(&'a [f64], &'a [f64]), EngineError> {
        let s = params
            .segment(&format!("comp{k}.scale"))
            .ok_or_else(|| EngineError::Config(format!("missing segment comp{k}.scale")))?;
        let l = params
            .segment(&format!("comp{k}.loc"))
            .ok_or_else(|| EngineError::Config(format!("missing segment comp{k}.loc")))?;
        if s.len() != self.data_dim || l.len() != self.data_dim {
            return Err(EngineError::Config(format!(
                "component {k} has wrong width: scale {} / loc {} vs data dim {}",
                s.len(),
                l.len(),
                self.data_dim
            )));
        }
        Ok((s, l))
    }

    fn check_inputs(&self, z: &Tensor, picks: &[usize]) -> Result<(), EngineError> {
        if z.ncols() != self.latent_dim {
            return Err(EngineError::Internal(format!(
                "latent width {} does not match generator latent_dim {}",
                z.ncols(),
                self.latent_dim
            )));
        }
        if matches!(self.model, Model::ScaleLoc { .. }) && picks.len() != z.nrows() {
            return Err(EngineError::Internal(format!(
                "picks length {} does not match batch {}",
                picks.len(),
                z.nrows()
            )));
        }
        Ok(())
    }
}

impl GeneratorNodes {
    /// Flat gradient in the parameter store's canonical order.
    pub fn collect_grad(&self, tape: &Tape, grads: &Gradients) -> Vec<f64> {
        match &self.kind {
            NodesKind::Mlp(nodes) => autodiff_nn::collect_mlp_grad(tape, grads, nodes),
            NodesKind::ScaleLoc(leaves) => {
                let mut out = Vec::new();
                for &leaf in leaves {
                    out.extend(grads.dense(tape, leaf).iter().copied());
                }
                out
            }
        }
    }

    /// All parameter leaf ids (for gradient-flow assertions).
    pub fn leaf_ids(&self) -> Vec<NodeId> {
        match &self.kind {
            NodesKind::Mlp(nodes) => {
                nodes.weights.iter().chain(&nodes.biases).copied().collect()
            }
            NodesKind::ScaleLoc(leaves) => leaves.clone(),
        }
    }
}

/// Convenience constructor for test fixtures: a `(B, d)` tensor from rows.
pub fn tensor_from_rows(rows: &[Vec<f64>]) -> Tensor {
    let b = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    matrix(b, d, rows.iter().flatten().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scale_loc(k: usize, d: usize) -> Generator {
        Generator::new(&GeneratorArch::ScaleLoc { components: k }, d, d).unwrap()
    }

    #[test]
    fn fresh_scale_loc_is_the_identity_on_latents() {
        let gen = scale_loc(1, 2);
        let mut rng = DetRng::stream(3, "latents");
        let params = gen.init_params(&mut rng);
        let (z, picks) = gen.draw_latents(5, &mut rng);
        let x = gen.forward_values(&params, &z, &picks).unwrap();
        assert_eq!(x, z);
    }

    #[test]
    fn doubled_scale_doubles_sample_spread() {
        let gen = scale_loc(1, 1);
        let mut rng = DetRng::stream(4, "latents");
        let mut params = gen.init_params(&mut rng);
        params.segment_mut("comp0.scale").unwrap()[0] = 2.0;
        let x = gen.sample(&params, 10_000, &mut rng).unwrap();
        let mean: f64 = x.iter().sum::<f64>() / 10_000.0;
        let var: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 10_000.0;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((var - 4.0).abs() < 0.3, "var {var}");
    }

    #[test]
    fn tape_forward_matches_value_forward_for_both_architectures() {
        let mut rng = DetRng::stream(9, "init");
        for gen in [
            scale_loc(3, 2),
            Generator::new(&GeneratorArch::Mlp { hidden: 16 }, 2, 2).unwrap(),
        ] {
            let params = gen.init_params(&mut rng);
            let (z, picks) = gen.draw_latents(6, &mut rng);
            let plain = gen.forward_values(&params, &z, &picks).unwrap();
            let mut tape = Tape::new();
            let (_, out) = gen.forward_tape(&mut tape, &params, &z, &picks, true).unwrap();
            let diff = (tape.value(out) - &plain).mapv(f64::abs);
            assert!(diff.iter().all(|&v| v == 0.0), "paths disagree: {diff:?}");
        }
    }

    #[test]
    fn component_masks_route_rows_to_their_pick() {
        let gen = scale_loc(2, 1);
        let mut rng = DetRng::stream(5, "init");
        let mut params = gen.init_params(&mut rng);
        params.segment_mut("comp0.loc").unwrap()[0] = -10.0;
        params.segment_mut("comp1.loc").unwrap()[0] = 10.0;
        let z = matrix(4, 1, vec![0.5, -0.5, 0.25, 0.0]);
        let picks = vec![0, 1, 1, 0];
        let x = gen.forward_values(&params, &z, &picks).unwrap();
        assert_eq!(x[(0, 0)], 0.5 - 10.0);
        assert_eq!(x[(1, 0)], -0.5 + 10.0);
        assert_eq!(x[(2, 0)], 0.25 + 10.0);
        assert_eq!(x[(3, 0)], -10.0);
    }

    #[test]
    fn gradient_reaches_every_parameter_leaf() {
        let mut rng = DetRng::stream(11, "init");
        for gen in [
            scale_loc(2, 2),
            Generator::new(&GeneratorArch::Mlp { hidden: 8 }, 2, 2).unwrap(),
        ] {
            let params = gen.init_params(&mut rng);
            let (z, mut picks) = gen.draw_latents(8, &mut rng);
            // Force both components to appear so both masks are active.
            if picks.len() >= 2 {
                picks[0] = 0;
                picks[1] = 1;
            }
            let mut tape = Tape::new();
            let (nodes, out) = gen.forward_tape(&mut tape, &params, &z, &picks, true).unwrap();
            let sq = tape.mul(out, out);
            let loss = tape.sum(sq);
            let grads = tape.backward(loss).unwrap();
            let flat = nodes.collect_grad(&tape, &grads);
            assert_eq!(flat.len(), params.total_len());
            assert!(flat.iter().any(|g| g.abs() > 0.0), "all-zero gradient");
        }
    }

    #[test]
    fn scale_loc_marginal_matches_hand_built_mixture() {
        let gen = scale_loc(2, 1);
        let mut rng = DetRng::stream(6, "init");
        let mut params = gen.init_params(&mut rng);
        params.segment_mut("comp0.scale").unwrap()[0] = 0.5;
        params.segment_mut("comp0.loc").unwrap()[0] = -1.0;
        params.segment_mut("comp1.scale").unwrap()[0] = 2.0;
        params.segment_mut("comp1.loc").unwrap()[0] = 1.5;
        let marginal = gen.clean_marginal(&params).unwrap();
        let reference = GaussianMixtureDensity::new(vec![
            Component { weight: 0.5, mean: vec![-1.0], diag_cov: vec![0.25] },
            Component { weight: 0.5, mean: vec![1.5], diag_cov: vec![4.0] },
        ])
        .unwrap();
        for x in [-2.0, -1.0, 0.0, 0.8, 3.0] {
            let (lm, _) = marginal.logdensity_score(&[x]).unwrap();
            let (lr, _) = reference.logdensity_score(&[x]).unwrap();
            assert!((lm - lr).abs() < 1e-14, "x={x}: {lm} vs {lr}");
        }
    }

    #[test]
    fn mlp_marginal_is_a_configuration_error() {
        let gen = Generator::new(&GeneratorArch::Mlp { hidden: 8 }, 2, 2).unwrap();
        let mut rng = DetRng::stream(2, "init");
        let params = gen.init_params(&mut rng);
        assert!(matches!(gen.clean_marginal(&params), Err(EngineError::Config(_))));
    }

    #[test]
    fn scale_loc_requires_matching_dims() {
        assert!(Generator::new(&GeneratorArch::ScaleLoc { components: 2 }, 3, 2).is_err());
    }
}
