//! Latent trajectory optimization.
//!
//! A trajectory is an ordered list of `T` latent points whose first and last
//! points are fixed. The interior points are optimized with Adam on
//!
//! ```text
//! L = sum_{i<T} ||w[i+1] - w[i]||^2
//!   + lambda_id    * sum_i KL(softmax(id(G(w[i], y))) || uniform)
//!   + lambda_class * sum_i CE(class(G(w[i], y)), y)
//! ```
//!
//! The first term alone is minimized by evenly spaced points on the segment
//! between the endpoints; the identity term pushes points towards latents on
//! which the identity classifier is maximally uncertain, and the class term
//! keeps the generated images recognizable as class `y`.
//!
//! Both model terms sum over all `T` points. The endpoint terms are part of
//! the reported value but, being constants, contribute no gradient.
//!
//! There is no hard safety margin on the distance to real data: how far a
//! trajectory stays from near-duplicates of training images is measured
//! after the fact by [`crate::eval`].

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, softmax, AdamState, Graph, NodeId, Tensor};
use crate::data::{Origin, ToyImage};
use crate::error::{Error, Result};
use crate::models::{Generator, ImageClassifier, LatentPoint};

pub const DEFAULT_TRAJECTORY_LEN: usize = 50;
pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_LR: f64 = 0.1;

/// Weights of the identity and class terms; the distance term has weight 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub identity: f64,
    pub class: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            identity: 0.1,
            class: 1.0,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        identity: 0.0,
        class: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.identity >= 0.0 && self.class >= 0.0) || !self.identity.is_finite() || !self.class.is_finite() {
            return Err(Error::invalid(format!("loss weights must be finite and non-negative: {:?}", self)));
        }
        Ok(())
    }
}

/// Ordered latent points with frozen endpoints and a shared class label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    points: Vec<LatentPoint>,
    class_label: usize,
}

impl Trajectory {
    pub fn new(points: Vec<LatentPoint>, class_label: usize) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::invalid(format!("a trajectory needs at least 3 points, got {}", points.len())));
        }
        let d = points[0].dim();
        if d == 0 {
            return Err(Error::invalid("latent dimension must be positive"));
        }
        if let Some(i) = points.iter().position(|p| p.dim() != d) {
            return Err(Error::shape(
                "trajectory",
                format!("point {} has dimension {}, point 0 has {}", i, points[i].dim(), d),
            ));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("trajectory point {} is not finite", i)));
        }
        Ok(Self { points, class_label })
    }

    pub fn points(&self) -> &[LatentPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn class_label(&self) -> usize {
        self.class_label
    }

    pub fn start(&self) -> &LatentPoint {
        &self.points[0]
    }

    pub fn end(&self) -> &LatentPoint {
        self.points.last().unwrap()
    }

    /// Only the first and last points are frozen.
    pub fn is_frozen(&self, i: usize) -> bool {
        i == 0 || i + 1 == self.points.len()
    }

    /// `[T, d]` matrix of all points.
    pub fn to_tensor(&self) -> Tensor {
        LatentPoint::stack(&self.points).expect("uniform dimension")
    }

    /// `[T-2, d]` matrix of the optimizable points.
    pub fn interior(&self) -> Tensor {
        LatentPoint::stack(&self.points[1..self.points.len() - 1]).expect("uniform dimension")
    }

    /// Same endpoints (bit for bit), new interior.
    fn with_interior(&self, interior: &Tensor) -> Result<Self> {
        let mut points = Vec::with_capacity(self.points.len());
        points.push(self.points[0].clone());
        points.extend(interior.row_iter().map(|r| LatentPoint(r.to_vec())));
        points.push(self.end().clone());
        Trajectory::new(points, self.class_label)
    }

    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        points.reverse();
        Self {
            points,
            class_label: self.class_label,
        }
    }

    /// Euclidean length of every segment.
    pub fn segment_lengths(&self) -> Vec<f64> {
        self.points.windows(2).map(|w| w[0].distance(&w[1])).collect()
    }
}

/// `w[i] = a + i/(T-1) * (b - a)`, with the endpoints copied exactly.
pub fn init_linear(a: &LatentPoint, b: &LatentPoint, t: usize, class_label: usize) -> Result<Trajectory> {
    if a.dim() != b.dim() {
        return Err(Error::shape(
            "init_linear",
            format!("endpoint dimensions {} and {}", a.dim(), b.dim()),
        ));
    }
    if t < 3 {
        return Err(Error::invalid(format!("trajectory length must be at least 3, got {}", t)));
    }
    let mut points = Vec::with_capacity(t);
    points.push(a.clone());
    for i in 1..t - 1 {
        let s = i as f64 / (t - 1) as f64;
        points.push(LatentPoint(
            a.0.iter().zip(&b.0).map(|(x, y)| x + s * (y - x)).collect(),
        ));
    }
    points.push(b.clone());
    Trajectory::new(points, class_label)
}

/// Frozen networks the objective is evaluated through.
#[derive(Clone, Copy)]
pub struct PlanModels<'a> {
    pub generator: &'a Generator,
    pub identity: &'a dyn ImageClassifier,
    pub class: &'a dyn ImageClassifier,
}

/// Individual loss values at one trajectory state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub dist: f64,
    pub identity: f64,
    pub class: f64,
    pub total: f64,
}

/// Loss terms recorded before the first update and after every step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub dist: Vec<f64>,
    pub identity: Vec<f64>,
    pub class: Vec<f64>,
    pub total: Vec<f64>,
}

impl LossTrace {
    fn push(&mut self, t: &LossTerms) {
        self.dist.push(t.dist);
        self.identity.push(t.identity);
        self.class.push(t.class);
        self.total.push(t.total);
    }

    pub fn len(&self) -> usize {
        self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,dist,identity,class,total\n");
        for i in 0..self.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                i, self.dist[i], self.identity[i], self.class[i], self.total[i]
            );
        }
        s
    }
}

/// Multipliers applied to each term when building the objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermScales {
    pub dist: f64,
    pub identity: f64,
    pub class: f64,
}

impl From<LossWeights> for TermScales {
    fn from(w: LossWeights) -> Self {
        Self {
            dist: 1.0,
            identity: w.identity,
            class: w.class,
        }
    }
}

/// Objective value and its gradient with respect to the interior points.
#[derive(Clone, Debug)]
pub struct ObjectiveEval {
    pub terms: LossTerms,
    pub interior_grad: Tensor,
}

fn check_models(models: &PlanModels<'_>, traj: &Trajectory) -> Result<()> {
    let g = models.generator;
    if traj.dim() != g.latent_dim {
        return Err(Error::shape(
            "plan",
            format!("trajectory dimension {} but generator latent dimension {}", traj.dim(), g.latent_dim),
        ));
    }
    if traj.class_label() >= g.n_classes || traj.class_label() >= models.class.n_outputs() {
        return Err(Error::invalid(format!(
            "class {} out of range for the generator/class classifier",
            traj.class_label()
        )));
    }
    if models.identity.n_outputs() < 2 {
        return Err(Error::invalid(format!(
            "identity loss needs at least 2 identities, classifier has {}",
            models.identity.n_outputs()
        )));
    }
    Ok(())
}

fn dist_value(w: &Tensor) -> f64 {
    let rows: Vec<&[f64]> = w.row_iter().collect();
    rows.windows(2)
        .map(|p| p[1].iter().zip(p[0]).map(|(b, a)| (b - a) * (b - a)).sum::<f64>())
        .sum()
}

/// `sum_{i<T} ||w[i+1] - w[i]||^2`.
pub fn loss_dist(traj: &Trajectory) -> f64 {
    dist_value(&traj.to_tensor())
}

fn images_of(traj: &Trajectory, gen: &Generator) -> Result<Tensor> {
    gen.generate(&traj.to_tensor(), &vec![traj.class_label(); traj.len()])
}

fn id_value(logits: &Tensor) -> f64 {
    logits
        .row_iter()
        .map(crate::autodiff::kernels::kl_uniform_from_logits)
        .sum()
}

fn class_value(logits: &Tensor, y: usize) -> f64 {
    logits
        .row_iter()
        .map(|r| crate::autodiff::kernels::cross_entropy(r, y))
        .sum()
}

/// `sum_i KL(softmax(id(G(w[i]))) || uniform)` over all points.
pub fn loss_id(traj: &Trajectory, gen: &Generator, identity: &dyn ImageClassifier) -> Result<f64> {
    if identity.n_outputs() < 2 {
        return Err(Error::invalid(format!(
            "identity loss needs at least 2 identities, classifier has {}",
            identity.n_outputs()
        )));
    }
    Ok(id_value(&identity.logits(&images_of(traj, gen)?)?))
}

/// `sum_i CE(class(G(w[i], y)), y)` over all points.
pub fn loss_class(traj: &Trajectory, gen: &Generator, class: &dyn ImageClassifier, y: usize) -> Result<f64> {
    if y >= class.n_outputs() || y >= gen.n_classes {
        return Err(Error::invalid(format!("class {} out of range", y)));
    }
    let images = gen.generate(&traj.to_tensor(), &vec![y; traj.len()])?;
    Ok(class_value(&class.logits(&images)?, y))
}

/// The straight line between a trajectory's endpoints.
///
/// Interior points are optimized as offsets from this line, and every
/// segment is formed as `step + offset[i+1] - offset[i]` with one shared
/// `step`. An exactly linear trajectory therefore has an exactly zero
/// distance gradient, instead of a round-off one that Adam's scale-free
/// update would blow up to the size of the learning rate.
struct LineFrame {
    line: Tensor,
    step: Tensor,
    class_label: usize,
}

impl LineFrame {
    fn new(traj: &Trajectory) -> Result<Self> {
        let t = traj.len();
        let line = init_linear(traj.start(), traj.end(), t, traj.class_label())?.to_tensor();
        let inv = 1.0 / (t - 1) as f64;
        let step: Vec<f64> = traj
            .start()
            .0
            .iter()
            .zip(&traj.end().0)
            .map(|(a, b)| (b - a) * inv)
            .collect();
        let step = Tensor::matrix(t - 1, step.len(), step.repeat(t - 1))?;
        Ok(Self {
            line,
            step,
            class_label: traj.class_label(),
        })
    }

    fn offsets(&self, traj: &Trajectory) -> Tensor {
        let t = traj.len();
        let mut off = traj.interior();
        let line = self.line.slice_rows(1, t - 1);
        off.data_mut().iter_mut().zip(line.data()).for_each(|(o, l)| *o -= l);
        off
    }

    fn trajectory(&self, template: &Trajectory, offsets: &Tensor) -> Result<Trajectory> {
        let t = template.len();
        let mut interior = self.line.slice_rows(1, t - 1);
        interior.data_mut().iter_mut().zip(offsets.data()).for_each(|(l, o)| *l += o);
        template.with_interior(&interior)
    }
}

fn objective_at(
    frame: &LineFrame,
    offsets: &Tensor,
    models: &PlanModels<'_>,
    scales: TermScales,
) -> Result<ObjectiveEval> {
    let (t, d) = frame.line.dims();
    let y = frame.class_label;

    let mut g = Graph::new();
    let zero = g.constant(Tensor::zeros(vec![1, d]));
    let interior = g.param(offsets.clone());
    let padded = g.concat_rows(&[zero, interior, zero])?;

    let head = g.slice_rows(padded, 1, t)?;
    let tail = g.slice_rows(padded, 0, t - 1)?;
    let rel = g.sub(head, tail)?;
    let step = g.constant(frame.step.clone());
    let seg = g.add(step, rel)?;
    let sq = g.mul(seg, seg)?;
    let dist_node = g.sum(sq);
    let dist = g.value(dist_node).item();

    let line = g.constant(frame.line.clone());
    let w = g.add(line, padded)?;

    let mut parts: Vec<NodeId> = vec![g.scale(dist_node, scales.dist)];
    let needs_images = scales.identity != 0.0 || scales.class != 0.0;
    let classes = vec![y; t];
    let images = if needs_images {
        models.generator.forward(&mut g, w, &classes, false)?.images
    } else {
        let x = models.generator.generate(g.value(w), &classes)?;
        g.constant(x)
    };

    let identity = if scales.identity != 0.0 {
        let logits = models.identity.forward_logits(&mut g, images)?;
        let kl = g.kl_uniform_logits(logits);
        let s = g.sum(kl);
        parts.push(g.scale(s, scales.identity));
        g.value(s).item()
    } else {
        id_value(&models.identity.logits(g.value(images))?)
    };

    let class = if scales.class != 0.0 {
        let logits = models.class.forward_logits(&mut g, images)?;
        let ce = g.cross_entropy(logits, &classes)?;
        let s = g.sum(ce);
        parts.push(g.scale(s, scales.class));
        g.value(s).item()
    } else {
        class_value(&models.class.logits(g.value(images))?, y)
    };

    let mut total = parts[0];
    for &p in &parts[1..] {
        total = g.add(total, p)?;
    }
    g.backward(total)?;
    Ok(ObjectiveEval {
        terms: LossTerms {
            dist,
            identity,
            class,
            total: g.value(total).item(),
        },
        interior_grad: g.grad_or_zeros(interior),
    })
}

/// Evaluates the scaled objective and its gradient on the interior points.
///
/// Terms with a zero scale are evaluated without recording their gradient;
/// they still appear in the returned values.
pub fn evaluate_objective(traj: &Trajectory, models: &PlanModels<'_>, scales: TermScales) -> Result<ObjectiveEval> {
    check_models(models, traj)?;
    let frame = LineFrame::new(traj)?;
    objective_at(&frame, &frame.offsets(traj), models, scales)
}

/// Runs `steps` Adam updates on the interior points.
///
/// The trace holds `steps + 1` entries (the initial evaluation first). The
/// endpoints of the returned trajectory are bit-identical to the input's.
pub fn optimize_trajectory(
    traj: &Trajectory,
    models: &PlanModels<'_>,
    weights: LossWeights,
    steps: usize,
    lr: f64,
) -> Result<(Trajectory, LossTrace)> {
    weights.validate()?;
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::invalid(format!("learning rate must be positive, got {}", lr)));
    }
    check_models(models, traj)?;
    let frame = LineFrame::new(traj)?;
    let mut params = vec![frame.offsets(traj)];
    let mut adam = AdamState::new(&params);
    let mut trace = LossTrace::default();
    for step in 0..=steps {
        let eval = objective_at(&frame, &params[0], models, weights.into())?;
        let finite = [eval.terms.dist, eval.terms.identity, eval.terms.class, eval.terms.total]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite {
                what: format!(
                    "trajectory loss {:?} (total trace so far: {:?})",
                    eval.terms, trace.total
                ),
                step,
            });
        }
        trace.push(&eval.terms);
        if step == steps {
            break;
        }
        adam_step(&mut params, std::slice::from_ref(&eval.interior_grad), &mut adam, lr)?;
    }
    let out = if steps == 0 {
        traj.clone()
    } else {
        frame.trajectory(traj, &params[0])?
    };
    Ok((out, trace))
}

/// Hyperparameters for optimizing many trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    pub trajectory_len: usize,
    pub steps: usize,
    pub lr: f64,
    pub weights: LossWeights,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            trajectory_len: DEFAULT_TRAJECTORY_LEN,
            steps: DEFAULT_STEPS,
            lr: DEFAULT_LR,
            weights: LossWeights::default(),
        }
    }
}

/// Optimizes independent trajectories on up to `workers` threads; results
/// come back in input order.
pub fn optimize_many(
    trajectories: &[Trajectory],
    models: &PlanModels<'_>,
    cfg: &PlanConfig,
    workers: usize,
) -> Result<Vec<(Trajectory, LossTrace)>> {
    let run = || {
        trajectories
            .par_iter()
            .map(|t| optimize_trajectory(t, models, cfg.weights, cfg.steps, cfg.lr))
            .collect::<Result<Vec<_>>>()
    };
    if workers <= 1 {
        return trajectories
            .iter()
            .map(|t| optimize_trajectory(t, models, cfg.weights, cfg.steps, cfg.lr))
            .collect();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {}", e)))?
        .install(run)
}

/// One generated image per trajectory point, labelled with the trajectory's class.
pub fn generate_from_trajectory(traj: &Trajectory, gen: &Generator) -> Result<Vec<ToyImage>> {
    let images = images_of(traj, gen)?;
    Ok(images
        .row_iter()
        .map(|r| ToyImage::new(r.to_vec(), None, traj.class_label(), Origin::Synthetic))
        .collect())
}

/// Largest identity-classifier probability at each trajectory point.
pub fn identity_confidence(traj: &Trajectory, gen: &Generator, identity: &dyn ImageClassifier) -> Result<Vec<f64>> {
    let probs = softmax(&identity.logits(&images_of(traj, gen)?)?);
    Ok(probs
        .row_iter()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

/// Run metadata stored in a trajectory file header.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub weights: LossWeights,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

const TRAJECTORY_MAGIC: &str = "# latent-walk trajectory v1";

/// Text form: a `key = value` header (T, d, class, lambda_id, lambda_class,
/// steps, lr, seed), a blank line, then one whitespace-separated point per row.
pub fn trajectory_to_text(traj: &Trajectory, meta: &TrajectoryMeta) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{}", TRAJECTORY_MAGIC);
    let _ = writeln!(s, "T = {}", traj.len());
    let _ = writeln!(s, "d = {}", traj.dim());
    let _ = writeln!(s, "class = {}", traj.class_label());
    let _ = writeln!(s, "lambda_id = {}", meta.weights.identity);
    let _ = writeln!(s, "lambda_class = {}", meta.weights.class);
    let _ = writeln!(s, "steps = {}", meta.steps);
    let _ = writeln!(s, "lr = {}", meta.lr);
    let _ = writeln!(s, "seed = {}", meta.seed);
    s.push('\n');
    for p in traj.points() {
        let row: Vec<String> = p.0.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

pub fn trajectory_from_text(text: &str) -> Result<(Trajectory, TrajectoryMeta)> {
    let bad = |d: String| Error::format("trajectory", d);
    let mut lines = text.lines();
    if lines.next() != Some(TRAJECTORY_MAGIC) {
        return Err(bad("missing header line".into()));
    }
    let mut header = std::collections::BTreeMap::new();
    for line in lines.by_ref() {
        if line.trim().is_empty() {
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("header line {:?}", line)))?;
        header.insert(k.trim().to_string(), v.trim().to_string());
    }
    fn get<T: std::str::FromStr>(h: &std::collections::BTreeMap<String, String>, k: &str) -> Result<T> {
        h.get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format("trajectory", format!("missing or invalid `{}`", k)))
    }
    let t: usize = get(&header, "T")?;
    let d: usize = get(&header, "d")?;
    let meta = TrajectoryMeta {
        weights: LossWeights {
            identity: get(&header, "lambda_id")?,
            class: get(&header, "lambda_class")?,
        },
        steps: get(&header, "steps")?,
        lr: get(&header, "lr")?,
        seed: get(&header, "seed")?,
    };
    let points: Vec<LatentPoint> = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| bad(format!("{:?}: {}", v, e))))
                .collect::<Result<Vec<f64>>>()
                .map(LatentPoint)
        })
        .collect::<Result<_>>()?;
    if points.len() != t || points.iter().any(|p| p.dim() != d) {
        return Err(bad(format!("expected {} rows of {} values", t, d)));
    }
    Ok((Trajectory::new(points, get(&header, "class")?)?, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Mlp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Classifier whose logits ignore the image.
    struct ConstLogits(Vec<f64>);

    impl ImageClassifier for ConstLogits {
        fn n_outputs(&self) -> usize {
            self.0.len()
        }
        fn forward_logits(&self, g: &mut Graph, images: NodeId) -> Result<NodeId> {
            let n = g.value(images).rows();
            let data = self.0.iter().cycle().take(n * self.0.len()).copied().collect();
            Ok(g.constant(Tensor::matrix(n, self.0.len(), data)?))
        }
    }

    fn lp(v: &[f64]) -> LatentPoint {
        LatentPoint(v.to_vec())
    }

    fn tiny_generator() -> Generator {
        Generator::new(3, 2, 4, &[8], &mut ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn init_linear_midpoint() {
        let t = init_linear(&lp(&[0.0, 0.0]), &lp(&[1.0, 1.0]), 3, 0).unwrap();
        assert_eq!(t.points()[1].0, vec![0.5, 0.5]);
    }

    #[test]
    fn init_linear_degenerate_segment() {
        let a = lp(&[0.3, -1.2]);
        let t = init_linear(&a, &a, 6, 0).unwrap();
        assert!(t.points().iter().all(|p| *p == a));
    }

    #[test]
    fn init_linear_rejects_bad_input() {
        assert!(init_linear(&lp(&[0.0]), &lp(&[0.0, 1.0]), 5, 0).is_err());
        assert!(init_linear(&lp(&[0.0]), &lp(&[1.0]), 2, 0).is_err());
    }

    #[test]
    fn loss_dist_examples() {
        let a = lp(&[0.7, 0.7]);
        assert_eq!(loss_dist(&init_linear(&a, &a, 5, 0).unwrap()), 0.0);
        let t = Trajectory::new(vec![lp(&[0.0]), lp(&[0.5]), lp(&[1.0])], 0).unwrap();
        assert_eq!(loss_dist(&t), 0.5);
    }

    #[test]
    fn equispaced_points_minimize_dist() {
        // Perturbing any interior point of the evenly spaced chain raises the loss.
        let base = init_linear(&lp(&[0.0, 0.0]), &lp(&[3.0, -1.0]), 7, 0).unwrap();
        let l0 = loss_dist(&base);
        for i in 1..6 {
            for j in 0..2 {
                let mut pts = base.points().to_vec();
                pts[i].0[j] += 0.01;
                let l = loss_dist(&Trajectory::new(pts, 0).unwrap());
                assert!(l > l0);
            }
        }
    }

    #[test]
    fn uniform_identity_stub_has_zero_loss() {
        let gen = tiny_generator();
        let t = init_linear(&lp(&[0.0, 1.0, 2.0]), &lp(&[1.0, 0.0, -2.0]), 5, 1).unwrap();
        let id = ConstLogits(vec![0.3; 4]);
        assert_eq!(loss_id(&t, &gen, &id).unwrap(), 0.0);
    }

    #[test]
    fn one_hot_identity_stub() {
        let gen = tiny_generator();
        let t = init_linear(&lp(&[0.0, 1.0, 2.0]), &lp(&[1.0, 0.0, -2.0]), 3, 1).unwrap();
        let id = ConstLogits(vec![0.0, -1e4]);
        let v = loss_id(&t, &gen, &id).unwrap();
        assert!((v - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn identity_loss_needs_two_identities() {
        let gen = tiny_generator();
        let t = init_linear(&lp(&[0.0; 3]), &lp(&[1.0; 3]), 3, 0).unwrap();
        assert!(loss_id(&t, &gen, &ConstLogits(vec![1.0])).is_err());
    }

    #[test]
    fn class_stub_examples() {
        let gen = tiny_generator();
        let t = init_linear(&lp(&[0.0; 3]), &lp(&[1.0; 3]), 50, 1).unwrap();
        let certain = ConstLogits(vec![-1e4, 0.0]);
        assert_eq!(loss_class(&t, &gen, &certain, 1).unwrap(), 0.0);
        let uniform = ConstLogits(vec![0.0, 0.0]);
        let v = loss_class(&t, &gen, &uniform, 1).unwrap();
        assert!((v - 50.0 * 2f64.ln()).abs() < 1e-12);
        assert!(loss_class(&t, &gen, &uniform, 2).is_err());
    }

    #[test]
    fn zero_steps_returns_input() {
        let gen = tiny_generator();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let id = Mlp::new(&[16, 4, 3], crate::autodiff::Activation::Relu, &mut rng);
        let cls = Mlp::new(&[16, 4, 2], crate::autodiff::Activation::Relu, &mut rng);
        let models = PlanModels {
            generator: &gen,
            identity: &id,
            class: &cls,
        };
        let t = init_linear(&lp(&[0.0, 1.0, 2.0]), &lp(&[1.0, 0.0, -2.0]), 6, 0).unwrap();
        let (out, trace) = optimize_trajectory(&t, &models, LossWeights::default(), 0, 0.1).unwrap();
        assert_eq!(out, t);
        assert_eq!(trace.len(), 1);
    }

    #[test]
    fn text_round_trip() {
        let t = Trajectory::new(
            vec![lp(&[0.1, -2.5e-7]), lp(&[1.0 / 3.0, 7.0]), lp(&[-0.0, 1e300])],
            1,
        )
        .unwrap();
        let meta = TrajectoryMeta {
            weights: LossWeights::default(),
            steps: 100,
            lr: 0.1,
            seed: 42,
        };
        let text = trajectory_to_text(&t, &meta);
        assert!(text.contains("T = 3\nd = 2\n"));
        let (back, m) = trajectory_from_text(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(m, meta);
        assert!(trajectory_from_text("nonsense").is_err());
    }
}
