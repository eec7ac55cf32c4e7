//! Linear classification on frozen descriptors, for domain-generalization
//! experiments: train on some domains, test on one that was never seen.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyConfig {
    /// l2 penalty on the weights (biases are not penalized).
    pub lambda: f64,
    /// Stop once the gradient norm falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            lambda: 1e-3,
            tolerance: 1e-6,
            max_iterations: 10_000,
        }
    }
}

impl ClassifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(
                "lambda",
                format!("{} must be positive", self.lambda),
            ));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::config(
                "tolerance",
                format!("{} must be positive", self.tolerance),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations", "must be at least 1"));
        }
        Ok(())
    }
}

/// Multinomial logistic regression: scores `W d + b`, one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// Sorted class labels; row `c` of the weights belongs to `classes[c]`.
    pub classes: Vec<String>,
    pub dim: usize,
    /// Row-major `classes x dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: String,
    pub scores: Vec<f64>,
}

impl LinearModel {
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "descriptor has dimension {}, model expects {}",
                x.len(),
                self.dim
            )));
        }
        Ok(self
            .weights
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect())
    }
}

/// Highest-scoring class; ties go to the earliest class in label order.
pub fn predict(model: &LinearModel, x: &[f64]) -> Result<Prediction> {
    let scores = model.scores(x)?;
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = c;
        }
    }
    Ok(Prediction {
        label: model.classes[best].clone(),
        scores,
    })
}

struct Problem<'a> {
    x: &'a [Vec<f64>],
    y: Vec<usize>,
    classes: usize,
    dim: usize,
    lambda: f64,
}

impl Problem<'_> {
    fn params(&self) -> usize {
        self.classes * (self.dim + 1)
    }

    /// Objective and gradient at `theta = [W row-major, b]`.
    fn eval(&self, theta: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let (k, d) = (self.classes, self.dim);
        let (w, b) = theta.split_at(k * d);
        let n = self.x.len() as f64;
        let mut loss = 0.0;
        let mut g = grad;
        if let Some(g) = g.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut z = vec![0.0; k];
        for (xi, &yi) in self.x.iter().zip(&self.y) {
            for c in 0..k {
                z[c] = w[c * d..(c + 1) * d]
                    .iter()
                    .zip(xi)
                    .map(|(a, v)| a * v)
                    .sum::<f64>()
                    + b[c];
            }
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - z[yi];
            if let Some(g) = g.as_deref_mut() {
                for c in 0..k {
                    let p = (z[c] - lse).exp() - if c == yi { 1.0 } else { 0.0 };
                    let row = &mut g[c * d..(c + 1) * d];
                    for (gv, xv) in row.iter_mut().zip(xi) {
                        *gv += p * xv / n;
                    }
                    g[k * d + c] += p / n;
                }
            }
        }
        let reg: f64 = w.iter().map(|v| v * v).sum::<f64>() * 0.5 * self.lambda;
        if let Some(g) = g {
            for (gv, wv) in g[..k * d].iter_mut().zip(w) {
                *gv += self.lambda * wv;
            }
        }
        loss / n + reg
    }
}

const HISTORY: usize = 10;

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L-BFGS directions with an Armijo backtracking line search. Every
/// accepted step strictly lowers the objective.
fn minimize(problem: &Problem, cfg: &ClassifyConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = problem.params();
    let mut theta = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut next_grad = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut f = problem.eval(&theta, Some(&mut grad));
    let mut trace = vec![f];
    let mut pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    for _ in 0..cfg.max_iterations {
        if dotv(&grad, &grad).sqrt() < cfg.tolerance {
            return Ok((theta, trace));
        }
        // two-loop recursion
        let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dotv(s, &dir);
            dir.iter_mut().zip(y).for_each(|(d, yv)| *d -= a * yv);
            alphas.push(a);
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = dotv(s, y) / dotv(y, y);
            dir.iter_mut().for_each(|d| *d *= gamma);
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dotv(y, &dir);
            dir.iter_mut().zip(s).for_each(|(d, sv)| *d += (a - b) * sv);
        }
        let mut slope = dotv(&grad, &dir);
        if slope.is_nan() || slope >= 0.0 {
            pairs.clear();
            dir = grad.iter().map(|g| -g).collect();
            slope = -dotv(&grad, &grad);
        }
        let mut step = if pairs.is_empty() {
            1.0 / dotv(&grad, &grad).sqrt().max(1.0)
        } else {
            1.0
        };
        let f_new = loop {
            for i in 0..n {
                trial[i] = theta[i] + step * dir[i];
            }
            let f_try = problem.eval(&trial, None);
            if f_try <= f + 1e-4 * step * slope && f_try < f {
                break f_try;
            }
            step *= 0.5;
            if step < 1e-20 {
                let gn = dotv(&grad, &grad).sqrt();
                return Err(Error::Solver(format!(
                    "line search stalled at gradient norm {gn:e}"
                )));
            }
        };
        problem.eval(&trial, Some(&mut next_grad));
        let s: Vec<f64> = trial.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dotv(&s, &y);
        if sy > 1e-12 * dotv(&y, &y).sqrt() * dotv(&s, &s).sqrt() {
            if pairs.len() == HISTORY {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut theta, &mut trial);
        std::mem::swap(&mut grad, &mut next_grad);
        f = f_new;
        trace.push(f);
    }
    if dotv(&grad, &grad).sqrt() < cfg.tolerance {
        return Ok((theta, trace));
    }
    Err(Error::Solver(format!(
        "gradient norm {:e} after {} iterations",
        dotv(&grad, &grad).sqrt(),
        cfg.max_iterations
    )))
}

/// Fit a model and also return the objective after every accepted step.
pub fn fit_linear(
    x: &[Vec<f64>],
    labels: &[String],
    cfg: &ClassifyConfig,
) -> Result<(LinearModel, Vec<f64>)> {
    cfg.validate()?;
    if x.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} descriptors but {} labels",
            x.len(),
            labels.len()
        )));
    }
    let classes: Vec<String> = labels
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.len() < 2 {
        return Err(Error::Label(format!(
            "need at least 2 classes, found {}",
            classes.len()
        )));
    }
    let dim = x[0].len();
    if x.iter().any(|v| v.len() != dim) {
        return Err(Error::Shape(
            "training descriptors differ in dimension".into(),
        ));
    }
    let lookup: HashMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let problem = Problem {
        x,
        y: labels.iter().map(|l| lookup[l.as_str()]).collect(),
        classes: classes.len(),
        dim,
        lambda: cfg.lambda,
    };
    let (theta, trace) = minimize(&problem, cfg)?;
    let mut theta = theta;
    let k = classes.len();
    let bias = theta[k * dim..].to_vec();
    theta.truncate(k * dim);
    Ok((
        LinearModel {
            classes,
            dim,
            weights: theta,
            bias,
        },
        trace,
    ))
}

/// Fit a multinomial logistic regression with l2 penalty `cfg.lambda`.
pub fn train_linear(
    x: &[Vec<f64>],
    labels: &[String],
    cfg: &ClassifyConfig,
) -> Result<LinearModel> {
    Ok(fit_linear(x, labels, cfg)?.0)
}

/// Fraction of samples whose predicted label equals the given one.
pub fn accuracy(model: &LinearModel, x: &[Vec<f64>], labels: &[String]) -> Result<f64> {
    if x.len() != labels.len() || x.is_empty() {
        return Err(Error::Input(
            "accuracy needs a non-empty, labeled sample".into(),
        ));
    }
    let correct: Vec<Result<bool>> = x
        .par_iter()
        .zip(labels)
        .map(|(v, l)| Ok(predict(model, v)?.label == *l))
        .collect();
    let mut n = 0;
    for c in correct {
        n += c? as usize;
    }
    Ok(n as f64 / x.len() as f64)
}

/// Descriptors with their class and domain labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledSet {
    pub ids: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
    pub classes: Vec<String>,
    pub domains: Vec<String>,
}

impl LabeledSet {
    pub fn push(&mut self, id: String, vector: Vec<f64>, class: String, domain: String) {
        self.ids.push(id);
        self.vectors.push(vector);
        self.classes.push(class);
        self.domains.push(domain);
    }

    fn select(&self, keep: impl Fn(&str) -> bool) -> (Vec<Vec<f64>>, Vec<String>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..self.ids.len() {
            if keep(&self.domains[i]) {
                x.push(self.vectors[i].clone());
                y.push(self.classes[i].clone());
            }
        }
        (x, y)
    }
}

/// Train on the union of `train_domains`, report accuracy on `test_domain`.
pub fn evaluate_domain_generalization(
    data: &LabeledSet,
    train_domains: &[String],
    test_domain: &str,
    cfg: &ClassifyConfig,
) -> Result<f64> {
    if train_domains.iter().any(|d| d == test_domain) {
        return Err(Error::Protocol(format!(
            "test domain `{test_domain}` is also a training domain"
        )));
    }
    let (x_train, y_train) = data.select(|d| train_domains.iter().any(|t| t == d));
    let (x_test, y_test) = data.select(|d| d == test_domain);
    if x_train.is_empty() {
        return Err(Error::Input(format!(
            "no samples in training domains {train_domains:?}"
        )));
    }
    if x_test.is_empty() {
        return Err(Error::Input(format!(
            "no samples in test domain `{test_domain}`"
        )));
    }
    let model = train_linear(&x_train, &y_train, cfg)?;
    accuracy(&model, &x_test, &y_test)
}

/// Parse a label manifest: tab-separated `id class domain` per line.
pub fn read_labels_tsv<R: BufRead>(source: R) -> Result<Vec<(String, String, String)>> {
    let mut out = Vec::new();
    for (lineno, line) in source.lines().enumerate() {
        let line = line.map_err(|e| Error::Format(format!("labels: {e}")))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, class, domain] = fields[..] else {
            return Err(Error::Format(format!(
                "labels line {}: expected id, class, domain",
                lineno + 1
            )));
        };
        out.push((id.to_string(), class.to_string(), domain.to_string()));
    }
    Ok(out)
}

/// One report row per `(training domains, test domain)` experiment.
pub fn write_accuracy_tsv<W: Write>(
    rows: &[(Vec<String>, String, f64)],
    config_hash: Option<u64>,
    mut sink: W,
) -> std::io::Result<()> {
    if let Some(h) = config_hash {
        writeln!(sink, "# config_hash={h:016x}")?;
    }
    writeln!(sink, "train_domains\ttest_domain\taccuracy")?;
    for (train, test, acc) in rows {
        writeln!(sink, "{}\t{test}\t{acc}", train.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &str) -> String {
        v.to_string()
    }

    #[test]
    fn separable_two_class_problem() {
        let x = vec![
            vec![1.0, 0.2],
            vec![0.9, -0.1],
            vec![-1.0, 0.1],
            vec![-0.8, -0.3],
        ];
        let y = vec![s("b"), s("b"), s("a"), s("a")];
        let (m, trace) = fit_linear(&x, &y, &ClassifyConfig::default()).unwrap();
        assert_eq!(accuracy(&m, &x, &y).unwrap(), 1.0);
        assert_eq!(m.classes, vec![s("a"), s("b")]);
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn one_hot_classes() {
        let x = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let y = vec![s("x"), s("y"), s("z")];
        let m = train_linear(&x, &y, &ClassifyConfig::default()).unwrap();
        assert_eq!(accuracy(&m, &x, &y).unwrap(), 1.0);
        assert_eq!(predict(&m, &x[1]).unwrap().label, "y");
    }

    #[test]
    fn heavy_penalty_shrinks_weights() {
        let x = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]];
        let y = vec![s("a"), s("b"), s("a")];
        let cfg = ClassifyConfig {
            lambda: 1e6,
            ..Default::default()
        };
        let m = train_linear(&x, &y, &cfg).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-5));
        // biases still capture the 2:1 class prior
        assert_eq!(predict(&m, &x[1]).unwrap().label, "a");
    }

    #[test]
    fn single_class_is_a_label_error() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            train_linear(&x, &[s("a"), s("a")], &ClassifyConfig::default()),
            Err(Error::Label(_))
        ));
    }

    #[test]
    fn prediction_ties_and_hand_model() {
        let zero = LinearModel {
            classes: vec![s("p"), s("q")],
            dim: 2,
            weights: vec![0.0; 4],
            bias: vec![0.0; 2],
        };
        assert_eq!(predict(&zero, &[0.3, 0.4]).unwrap().label, "p");
        let hand = LinearModel {
            classes: vec![s("one"), s("two")],
            dim: 2,
            weights: vec![1.0, 0.0, 0.0, 1.0],
            bias: vec![0.0, 0.0],
        };
        assert_eq!(predict(&hand, &[0.8, 0.6]).unwrap().label, "one");
        assert!(matches!(predict(&hand, &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn shifting_all_scores_keeps_the_argmax() {
        let mut m = LinearModel {
            classes: vec![s("a"), s("b"), s("c")],
            dim: 2,
            weights: vec![0.2, -0.1, 0.5, 0.3, -0.4, 0.9],
            bias: vec![0.1, 0.0, -0.2],
        };
        let x = [0.6, -0.8];
        let before = predict(&m, &x).unwrap().label;
        m.bias.iter_mut().for_each(|b| *b += 7.5);
        assert_eq!(predict(&m, &x).unwrap().label, before);
    }

    #[test]
    fn domain_invariant_features_transfer() {
        let mut data = LabeledSet::default();
        for (di, domain) in ["photo", "sketch", "art"].iter().enumerate() {
            for (ci, class) in ["cat", "dog", "fish"].iter().enumerate() {
                let mut v = vec![0.0; 3];
                v[ci] = 1.0;
                data.push(format!("{domain}-{class}-{di}"), v, s(class), s(domain));
            }
        }
        let cfg = ClassifyConfig::default();
        let acc =
            evaluate_domain_generalization(&data, &[s("photo"), s("sketch")], "art", &cfg).unwrap();
        assert_eq!(acc, 1.0);
        assert!(matches!(
            evaluate_domain_generalization(&data, &[s("photo"), s("art")], "art", &cfg),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn label_tsv() {
        let rows = read_labels_tsv("# c\na\tdog\tphoto\nb\tcat\tsketch\n".as_bytes()).unwrap();
        assert_eq!(rows[1], (s("b"), s("cat"), s("sketch")));
        assert!(read_labels_tsv("a\tdog\n".as_bytes()).is_err());
        let mut out = Vec::new();
        write_accuracy_tsv(&[(vec![s("p"), s("s")], s("a"), 0.5)], None, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "train_domains\ttest_domain\taccuracy\np,s\ta\t0.5\n"
        );
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = vec![
            vec![0.3, -1.2, 0.5],
            vec![1.1, 0.4, -0.2],
            vec![-0.7, 0.9, 0.8],
            vec![0.2, 0.1, -1.0],
        ];
        let problem = Problem {
            x: &x,
            y: vec![0, 2, 1, 2],
            classes: 3,
            dim: 3,
            lambda: 0.05,
        };
        let theta: Vec<f64> = (0..problem.params())
            .map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.1)
            .collect();
        let mut g = vec![0.0; theta.len()];
        problem.eval(&theta, Some(&mut g));
        for i in 0..theta.len() {
            let (mut up, mut dn) = (theta.clone(), theta.clone());
            up[i] += 1e-6;
            dn[i] -= 1e-6;
            let fd = (problem.eval(&up, None) - problem.eval(&dn, None)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-7, "param {i}: {fd} vs {}", g[i]);
        }
    }

    proptest::proptest! {
        #[test]
        fn accuracy_is_the_confusion_trace(
            w in proptest::collection::vec(-1.0f64..1.0, 9),
            pts in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0, 0usize..3), 1..40),
        ) {
            let classes = vec![s("a"), s("b"), s("c")];
            let model = LinearModel { classes: classes.clone(), dim: 2, weights: w[..6].to_vec(), bias: w[6..].to_vec() };
            let x: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.0, p.1]).collect();
            let y: Vec<String> = pts.iter().map(|p| classes[p.2].clone()).collect();
            let mut confusion = [[0usize; 3]; 3];
            for (v, &(_, _, truth)) in x.iter().zip(&pts) {
                let score = |c: usize| w[2 * c] * v[0] + w[2 * c + 1] * v[1] + w[6 + c];
                let mut best = 0;
                for c in 1..3 {
                    if score(c) > score(best) {
                        best = c;
                    }
                }
                confusion[truth][best] += 1;
            }
            let trace: usize = (0..3).map(|c| confusion[c][c]).sum();
            let acc = accuracy(&model, &x, &y).unwrap();
            proptest::prop_assert!((acc - trace as f64 / pts.len() as f64).abs() < 1e-15);
        }
    }

    proptest::proptest! {
        #[test]
        fn objective_never_increases(
            seed in proptest::collection::vec(-2.0f64..2.0, 24),
            lambda in 1e-4f64..1.0,
        ) {
            let x: Vec<Vec<f64>> = seed.chunks(3).map(|c| c.to_vec()).collect();
            let y: Vec<String> = (0..x.len()).map(|i| ["a", "b", "c"][i % 3].to_string()).collect();
            let cfg = ClassifyConfig { lambda, ..Default::default() };
            let (_, trace) = fit_linear(&x, &y, &cfg).unwrap();
            proptest::prop_assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
