//! Iterative optimization of document parameters.
//!
//! Each iteration renders the document with a tape, evaluates the guidance
//! loss, backpropagates pixel gradients to the parameters, and takes one Adam
//! step per active group. Shape and color carry independent Adam states and
//! learning rates; an element mask restricts updates to a subset while the
//! rest of the document keeps compositing untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::guidance::{total_loss, EmbedderBackend, GuidanceConfig, LossTerms};
use crate::model::{
    apply_params, flatten_params, ElementMask, ParamGroup, ParamKey, ParamVector, VectorDocument,
};
use crate::raster::Raster;
use crate::render::{backward, render_with_tape, RenderSettings};
use crate::{Error, Result};

/// Adam state for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { step: 0, m: vec![0.0; len], v: vec![0.0; len], beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} parameters", state.m.len()),
            got: format!("{} params / {} grads", params.len(), grads.len()),
        });
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { step: state.step + 1, index });
    }
    state.step += 1;
    let bc1 = 1.0 - state.beta1.powi(state.step as i32);
    let bc2 = 1.0 - state.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizeMode {
    Both,
    ShapeOnly,
    ColorOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeConfig {
    pub iterations: u32,
    pub lr_shape: f64,
    pub lr_color: f64,
    pub mode: OptimizeMode,
    /// Elements to optimize; `None` means all.
    pub mask: Option<ElementMask>,
    pub seed: u64,
    /// Snapshot cadence for the report and progress callback.
    pub snapshot_every: u32,
    pub guidance: GuidanceConfig,
    pub render: RenderSettings,
}

impl OptimizeConfig {
    pub fn new(guidance: GuidanceConfig) -> Self {
        OptimizeConfig {
            iterations: 150,
            lr_shape: 0.2,
            lr_color: 0.01,
            mode: OptimizeMode::Both,
            mask: None,
            seed: 0,
            snapshot_every: 10,
            guidance,
            render: RenderSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr_shape < 0.0 || self.lr_color < 0.0 {
            return Err(Error::InvalidConfig("learning rates must be non-negative".into()));
        }
        if self.snapshot_every == 0 {
            return Err(Error::InvalidConfig("snapshot_every must be positive".into()));
        }
        self.render.validate()
    }
}

/// Everything observable about one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// Pre-step loss per iteration.
    pub history: Vec<f64>,
    /// Weighted per-term breakdown per iteration.
    pub terms: Vec<LossTerms>,
    /// Documents captured at the snapshot cadence (pre-step state).
    pub snapshots: Vec<(u32, VectorDocument)>,
    pub final_doc: VectorDocument,
}

/// Partition a gradient vector aligned with a `Both`-group layout into its
/// shape and color parts, honoring the mode and mask; excluded entries drop.
pub fn split_gradients(
    full_grads: &[f64],
    layout: &[ParamKey],
    mode: OptimizeMode,
    mask: &ElementMask,
) -> (Vec<f64>, Vec<f64>) {
    let mut shape = Vec::new();
    let mut color = Vec::new();
    for (key, &g) in layout.iter().zip(full_grads) {
        if !mask.contains(key.id) {
            continue;
        }
        if key.field.is_shape() {
            if mode != OptimizeMode::ColorOnly {
                shape.push(g);
            }
        } else if mode != OptimizeMode::ShapeOnly {
            color.push(g);
        }
    }
    (shape, color)
}

/// Progress event handed to the callback each iteration.
pub struct Progress<'a> {
    pub iteration: u32,
    pub loss: f64,
    /// Present at the snapshot cadence: the raster rendered this iteration.
    pub snapshot: Option<&'a Raster>,
}

/// Run the optimization loop and return the full report.
///
/// Per iteration: render with tape, evaluate the total loss against the
/// initial raster, backpropagate, take one Adam step per active group, and
/// re-apply the parameters (clamping colors). The patch rng is seeded from
/// `config.seed` and advances deterministically, so a run is reproducible
/// bit for bit.
pub fn optimize(
    doc: &VectorDocument,
    initial: &Raster,
    config: &OptimizeConfig,
    backend: &dyn EmbedderBackend,
    mut progress: impl FnMut(Progress<'_>),
) -> Result<RunReport> {
    config.validate()?;
    if doc.width() != initial.width() || doc.height() != initial.height() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", initial.width(), initial.height()),
            got: format!("{}x{}", doc.width(), doc.height()),
        });
    }
    let mask = match &config.mask {
        Some(m) => {
            for id in m.iter() {
                if doc.element(id).is_none() {
                    return Err(Error::UnknownElement { id });
                }
            }
            m.clone()
        }
        None => ElementMask::all(doc),
    };

    let mut current = doc.clone();
    let mut shape_pv: ParamVector = flatten_params(&current, ParamGroup::Shape, &mask)?;
    let mut color_pv: ParamVector = flatten_params(&current, ParamGroup::Color, &mask)?;
    let mut shape_state = AdamState::new(shape_pv.len());
    let mut color_state = AdamState::new(color_pv.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut history = Vec::with_capacity(config.iterations as usize);
    let mut terms = Vec::with_capacity(config.iterations as usize);
    let mut snapshots = Vec::new();

    for iter in 0..config.iterations {
        let (raster, tape) = render_with_tape(&current, &config.render)?;
        let eval = total_loss(backend, &config.guidance, &raster, initial, &mut rng)?;
        if !eval.loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: iter as usize });
        }
        let grads = backward(&tape, &eval.pixel_grad)?;

        let snapshot_now = iter % config.snapshot_every == 0;
        if snapshot_now {
            snapshots.push((iter, current.clone()));
        }
        progress(Progress { iteration: iter, loss: eval.loss, snapshot: snapshot_now.then_some(&raster) });
        history.push(eval.loss);
        terms.push(eval.terms);

        if config.mode != OptimizeMode::ColorOnly && !shape_pv.is_empty() {
            let g = grads.gather(&shape_pv.layout);
            adam_step(&mut shape_state, &mut shape_pv.values, &g, config.lr_shape)
                .map_err(|e| at_iteration(e, iter))?;
            current = apply_params(&current, &shape_pv)?;
        }
        if config.mode != OptimizeMode::ShapeOnly && !color_pv.is_empty() {
            let g = grads.gather(&color_pv.layout);
            adam_step(&mut color_state, &mut color_pv.values, &g, config.lr_color)
                .map_err(|e| at_iteration(e, iter))?;
            current = apply_params(&current, &color_pv)?;
            // Clamping may have projected colors back; keep the vector in
            // sync with the document so Adam sees the projected state.
            color_pv = flatten_params(&current, ParamGroup::Color, &mask)?;
        }
    }

    Ok(RunReport { history, terms, snapshots, final_doc: current })
}

fn at_iteration(e: Error, iteration: u32) -> Error {
    match e {
        Error::NonFiniteGradient { index, .. } => Error::NonFiniteGradient { step: iteration as u64, index },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{IRect, Point};
    use crate::guidance::{LinearMockEmbedder, RoiPrompt};
    use crate::model::{CubicPath, Rgba};
    use crate::render::render;

    fn toy_doc() -> VectorDocument {
        let mut doc = VectorDocument::new(24, 24).unwrap();
        doc.begin_round(10, None);
        doc.push_element(CubicPath::rect(0.0, 0.0, 24.0, 24.0), Rgba::opaque(0.7, 0.7, 0.2)).unwrap();
        doc.push_element(CubicPath::rect(3.0, 3.0, 12.0, 12.0), Rgba::opaque(0.2, 0.5, 0.8)).unwrap();
        doc.push_element(
            CubicPath::new(vec![
                Point::new(14.0, 14.0),
                Point::new(21.0, 12.0),
                Point::new(19.0, 21.0),
            ])
            .unwrap(),
            Rgba::new(0.8, 0.2, 0.3, 0.9),
        )
        .unwrap();
        doc
    }

    fn toy_config(iterations: u32) -> OptimizeConfig {
        let mut roi = RoiPrompt::new(IRect::new(0, 0, 24, 24), "target");
        roi.patch_count = 2;
        let guidance = GuidanceConfig { rois: vec![roi], ..Default::default() };
        let mut config = OptimizeConfig::new(guidance);
        config.iterations = iterations;
        config
    }

    #[test]
    fn adam_zero_grad_leaves_params() {
        let mut state = AdamState::new(3);
        let mut params = vec![1.0, -2.0, 0.5];
        adam_step(&mut state, &mut params, &[0.0, 0.0, 0.0], 0.2).unwrap();
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut state = AdamState::new(1);
        let mut params = vec![0.0];
        adam_step(&mut state, &mut params, &[1.0], 0.2).unwrap();
        assert!((params[0] + 0.2).abs() < 1e-7, "got {}", params[0]);
    }

    #[test]
    fn adam_matches_scalar_oracle() {
        // Independent scalar Adam, written from the update equations.
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.1);
        let grads = [1.0, 0.0, 0.0, -0.5, 2.0];
        let mut om = 0.0f64;
        let mut ov = 0.0f64;
        let mut op = 0.3f64;
        let mut expected = Vec::new();
        for (t, g) in grads.iter().enumerate() {
            om = b1 * om + (1.0 - b1) * g;
            ov = b2 * ov + (1.0 - b2) * g * g;
            let mh = om / (1.0 - b1.powi(t as i32 + 1));
            let vh = ov / (1.0 - b2.powi(t as i32 + 1));
            op -= lr * mh / (vh.sqrt() + eps);
            expected.push(op);
        }

        let mut state = AdamState::new(1);
        let mut params = vec![0.3];
        let mut got = Vec::new();
        for g in grads {
            adam_step(&mut state, &mut params, &[g], lr).unwrap();
            got.push(params[0]);
        }
        for (e, g) in expected.iter().zip(&got) {
            assert!((e - g).abs() < 1e-15);
        }
        // Zero-grad steps after a nonzero one still move via momentum decay.
        assert!((got[1] - got[0]).abs() > 1e-6);
    }

    #[test]
    fn adam_rejects_nan_gradients() {
        let mut state = AdamState::new(2);
        let mut params = vec![0.0, 0.0];
        match adam_step(&mut state, &mut params, &[0.0, f64::NAN], 0.1) {
            Err(Error::NonFiniteGradient { index: 1, .. }) => {}
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
    }

    #[test]
    fn split_gradients_partitions_exactly() {
        let doc = toy_doc();
        let mask = ElementMask::all(&doc);
        let pv = flatten_params(&doc, ParamGroup::Both, &mask).unwrap();
        let grads: Vec<f64> = (0..pv.len()).map(|i| i as f64).collect();
        let (shape, color) = split_gradients(&grads, &pv.layout, OptimizeMode::Both, &mask);
        assert_eq!(shape.len() + color.len(), grads.len());

        let (_, color_empty) = split_gradients(&grads, &pv.layout, OptimizeMode::ShapeOnly, &mask);
        assert!(color_empty.is_empty());

        let empty = ElementMask::from_ids([]);
        let (s, c) = split_gradients(&grads, &pv.layout, OptimizeMode::Both, &empty);
        assert!(s.is_empty() && c.is_empty());
    }

    #[test]
    fn zero_iterations_returns_input_document() {
        let doc = toy_doc();
        let initial = render(&doc, &RenderSettings::default()).unwrap();
        let backend = LinearMockEmbedder::with_seed(0);
        let report = optimize(&doc, &initial, &toy_config(0), &backend, |_| {}).unwrap();
        assert_eq!(report.final_doc, doc);
        assert!(report.history.is_empty());
    }

    #[test]
    fn color_only_freezes_every_control_point() {
        let doc = toy_doc();
        let initial = render(&doc, &RenderSettings::default()).unwrap();
        let backend = LinearMockEmbedder::with_seed(0);
        let mut config = toy_config(5);
        config.mode = OptimizeMode::ColorOnly;
        let report = optimize(&doc, &initial, &config, &backend, |_| {}).unwrap();
        for (before, after) in doc.elements().zip(report.final_doc.elements()) {
            assert_eq!(before.path, after.path);
        }
    }

    #[test]
    fn shape_only_freezes_every_color() {
        let doc = toy_doc();
        let initial = render(&doc, &RenderSettings::default()).unwrap();
        let backend = LinearMockEmbedder::with_seed(0);
        let mut config = toy_config(5);
        config.mode = OptimizeMode::ShapeOnly;
        let report = optimize(&doc, &initial, &config, &backend, |_| {}).unwrap();
        for (before, after) in doc.elements().zip(report.final_doc.elements()) {
            assert_eq!(before.fill, after.fill);
        }
    }

    #[test]
    fn masked_out_elements_stay_bit_identical() {
        let doc = toy_doc();
        let initial = render(&doc, &RenderSettings::default()).unwrap();
        let backend = LinearMockEmbedder::with_seed(0);
        let mut config = toy_config(5);
        config.mask = Some(ElementMask::from_ids([1]));
        let report = optimize(&doc, &initial, &config, &backend, |_| {}).unwrap();
        let before: Vec<_> = doc.elements().collect();
        let after: Vec<_> = report.final_doc.elements().collect();
        assert_eq!(before[0], after[0]);
        assert_eq!(before[2], after[2]);
        assert_ne!(before[1], after[1]);
    }

    #[test]
    fn runs_are_reproducible() {
        let doc = toy_doc();
        let initial = render(&doc, &RenderSettings::default()).unwrap();
        let backend = LinearMockEmbedder::with_seed(0);
        let config = toy_config(8);
        let a = optimize(&doc, &initial, &config, &backend, |_| {}).unwrap();
        let b = optimize(&doc, &initial, &config, &backend, |_| {}).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn topology_is_preserved() {
        let doc = toy_doc();
        let initial = render(&doc, &RenderSettings::default()).unwrap();
        let backend = LinearMockEmbedder::with_seed(0);
        let report = optimize(&doc, &initial, &toy_config(6), &backend, |_| {}).unwrap();
        assert_eq!(report.final_doc.element_count(), doc.element_count());
        assert_eq!(report.final_doc.rounds().len(), doc.rounds().len());
        for (a, b) in doc.elements().zip(report.final_doc.elements()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.path.point_count(), b.path.point_count());
        }
    }

    #[test]
    fn history_and_snapshot_cadence() {
        let doc = toy_doc();
        let initial = render(&doc, &RenderSettings::default()).unwrap();
        let backend = LinearMockEmbedder::with_seed(0);
        let mut config = toy_config(7);
        config.snapshot_every = 3;
        let mut callback_snapshots = 0;
        let report = optimize(&doc, &initial, &config, &backend, |p| {
            if p.snapshot.is_some() {
                callback_snapshots += 1;
            }
        })
        .unwrap();
        assert_eq!(report.history.len(), 7);
        assert_eq!(report.snapshots.iter().map(|(i, _)| *i).collect::<Vec<_>>(), vec![0, 3, 6]);
        assert_eq!(callback_snapshots, 3);
    }
}
