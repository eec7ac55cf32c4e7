//! Procedural line drawings of simple shapes, for toy experiments.
//!
//! Each class is a fixed outline in unit coordinates. A rendering applies a
//! random similarity transform, a smooth warp that wobbles the strokes,
//! random stroke width and strength, and a little background clutter.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use rand::Rng;

use crate::edgemap::{binarize_at, EdgeMap};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::training::TrainingItem;

pub const SHAPE_CLASSES: [&str; 10] = [
    "triangle", "square", "pentagon", "hexagon", "star", "circle", "ellipse", "cross", "arrow",
    "ring",
];

type Stroke = Vec<(f64, f64)>;

fn regular(n: usize, phase: f64) -> Stroke {
    (0..=n)
        .map(|i| {
            let a = phase + TAU * i as f64 / n as f64;
            (a.cos(), a.sin())
        })
        .collect()
}

fn ellipse(rx: f64, ry: f64) -> Stroke {
    (0..=48)
        .map(|i| {
            let a = TAU * i as f64 / 48.0;
            (rx * a.cos(), ry * a.sin())
        })
        .collect()
}

fn closed(points: &[(f64, f64)]) -> Stroke {
    let mut s = points.to_vec();
    s.push(points[0]);
    s
}

/// Outline strokes of a class, roughly inside the unit disc.
fn outline(class: usize) -> Vec<Stroke> {
    match class {
        0 => vec![regular(3, -PI / 2.0)],
        1 => vec![regular(4, PI / 4.0)],
        2 => vec![regular(5, -PI / 2.0)],
        3 => vec![regular(6, 0.0)],
        4 => vec![(0..=10)
            .map(|i| {
                let a = -PI / 2.0 + PI * i as f64 / 5.0;
                let r = if i % 2 == 0 { 1.0 } else { 0.42 };
                (r * a.cos(), r * a.sin())
            })
            .collect()],
        5 => vec![ellipse(1.0, 1.0)],
        6 => vec![ellipse(1.0, 0.5)],
        7 => {
            let (a, b) = (0.3, 1.0);
            vec![closed(&[
                (-a, -b),
                (a, -b),
                (a, -a),
                (b, -a),
                (b, a),
                (a, a),
                (a, b),
                (-a, b),
                (-a, a),
                (-b, a),
                (-b, -a),
                (-a, -a),
            ])]
        }
        8 => vec![closed(&[
            (-1.0, -0.25),
            (0.2, -0.25),
            (0.2, -0.6),
            (1.0, 0.0),
            (0.2, 0.6),
            (0.2, 0.25),
            (-1.0, 0.25),
        ])],
        _ => vec![ellipse(1.0, 1.0), ellipse(0.5, 0.5)],
    }
}

/// Rendering variability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    /// Canvas side in pixels.
    pub size: usize,
    /// Amplitude of the stroke warp, as a fraction of the canvas.
    pub jitter: f64,
    /// Faint random segments added to the background.
    pub clutter: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            size: 64,
            jitter: 0.03,
            clutter: 3,
        }
    }
}

fn draw_segment(
    canvas: &mut [f64],
    size: usize,
    p: (f64, f64),
    q: (f64, f64),
    half_width: f64,
    strength: f64,
) {
    let reach = half_width + 1.0;
    let x0 = (p.0.min(q.0) - reach).floor().max(0.0) as usize;
    let y0 = (p.1.min(q.1) - reach).floor().max(0.0) as usize;
    let x1 = ((p.0.max(q.0) + reach).ceil().max(0.0) as usize).min(size - 1);
    let y1 = ((p.1.max(q.1) + reach).ceil().max(0.0) as usize).min(size - 1);
    let (dx, dy) = (q.0 - p.0, q.1 - p.1);
    let len2 = dx * dx + dy * dy;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = if len2 > 0.0 {
                (((px - p.0) * dx + (py - p.1) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let d = ((px - p.0 - t * dx).powi(2) + (py - p.1 - t * dy).powi(2)).sqrt();
            let v = strength * (1.0 - (d - half_width).max(0.0)).max(0.0);
            let cell = &mut canvas[y * size + x];
            *cell = cell.max(v);
        }
    }
}

/// Placement of one shape on the canvas. Rendering the same instance with
/// different style draws gives two drawings of one object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeInstance {
    pub class: usize,
    pub angle: f64,
    /// Outline radius in pixels.
    pub radius: f64,
    /// Horizontal over vertical stretch is `stretch^2`.
    pub stretch: f64,
    pub center: (f64, f64),
}

impl ShapeInstance {
    pub fn random<R: Rng + ?Sized>(class: usize, cfg: &RenderConfig, rng: &mut R) -> Result<Self> {
        if class >= SHAPE_CLASSES.len() {
            return Err(Error::Input(format!("shape class {class} out of range")));
        }
        if cfg.size < 8 {
            return Err(Error::Size(format!(
                "canvas of {} pixels is too small",
                cfg.size
            )));
        }
        let s = cfg.size as f64;
        Ok(ShapeInstance {
            class,
            angle: rng.gen_range(-0.25..0.25),
            radius: s * rng.gen_range(0.28..0.4),
            stretch: rng.gen_range(0.9..1.1),
            center: (
                s / 2.0 + rng.gen_range(-0.08..0.08) * s,
                s / 2.0 + rng.gen_range(-0.08..0.08) * s,
            ),
        })
    }
}

/// Render one random view of `class`.
pub fn render_shape<R: Rng + ?Sized>(
    class: usize,
    cfg: &RenderConfig,
    rng: &mut R,
) -> Result<EdgeMap> {
    let inst = ShapeInstance::random(class, cfg, rng)?;
    render_instance(&inst, cfg, rng)
}

/// Draw `inst` with random stroke warp, width, strength and clutter.
pub fn render_instance<R: Rng + ?Sized>(
    inst: &ShapeInstance,
    cfg: &RenderConfig,
    rng: &mut R,
) -> Result<EdgeMap> {
    if inst.class >= SHAPE_CLASSES.len() {
        return Err(Error::Input(format!(
            "shape class {} out of range",
            inst.class
        )));
    }
    if cfg.size < 8 {
        return Err(Error::Size(format!(
            "canvas of {} pixels is too small",
            cfg.size
        )));
    }
    let s = cfg.size as f64;
    let ShapeInstance {
        class,
        angle,
        radius,
        stretch,
        center: (cx, cy),
    } = *inst;
    // smooth displacement field: two random plane waves per axis
    let waves: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(0.0..TAU),
            )
        })
        .collect();
    let amp = cfg.jitter * s;
    let warp = |u: f64, v: f64| {
        let w = |k: usize| waves[k].0 * u + waves[k].1 * v + waves[k].2;
        (
            amp * 0.5 * (w(0).sin() + w(1).sin()),
            amp * 0.5 * (w(2).sin() + w(3).sin()),
        )
    };
    let (sin, cos) = f64::sin_cos(angle);
    let half_width = rng.gen_range(0.4..1.0);
    let strength = rng.gen_range(0.6..1.0);

    let mut canvas = vec![0.0; cfg.size * cfg.size];
    for stroke in outline(class) {
        let mut pts = Vec::new();
        for pair in stroke.windows(2) {
            let ((ax, ay), (bx, by)) = (pair[0], pair[1]);
            let steps = ((bx - ax).hypot(by - ay) * radius / 3.0).ceil().max(1.0) as usize;
            for i in 0..steps {
                let t = i as f64 / steps as f64;
                pts.push((ax + t * (bx - ax), ay + t * (by - ay)));
            }
        }
        pts.push(*stroke.last().unwrap());
        let placed: Vec<(f64, f64)> = pts
            .into_iter()
            .map(|(u, v)| {
                let (u, v) = (u * stretch, v / stretch);
                let (du, dv) = warp(u, v);
                (
                    cx + radius * (cos * u - sin * v) + du,
                    cy + radius * (sin * u + cos * v) + dv,
                )
            })
            .collect();
        for seg in placed.windows(2) {
            draw_segment(&mut canvas, cfg.size, seg[0], seg[1], half_width, strength);
        }
    }
    for _ in 0..cfg.clutter {
        let p = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
        let a = rng.gen_range(0.0..TAU);
        let l = rng.gen_range(0.05..0.15) * s;
        let q = (p.0 + l * a.cos(), p.1 + l * a.sin());
        draw_segment(&mut canvas, cfg.size, p, q, 0.5, rng.gen_range(0.05..0.2));
    }
    EdgeMap::new(cfg.size, cfg.size, canvas)
}

/// `per_class` renderings of every class, ids `{prefix}-{class}-{i}`,
/// model ids equal to the class name. Each item has its own substream, so
/// the corpus does not depend on generation order.
pub fn render_corpus(
    prefix: &str,
    per_class: usize,
    is_query: bool,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<Vec<Arc<TrainingItem>>> {
    let mut out = Vec::with_capacity(per_class * SHAPE_CLASSES.len());
    for (c, name) in SHAPE_CLASSES.iter().enumerate() {
        for i in 0..per_class {
            let id = format!("{prefix}-{name}-{i}");
            let mut rng = substream(seed, &format!("synth/{id}"));
            let map = render_shape(c, cfg, &mut rng)?;
            out.push(Arc::new(TrainingItem::new(id, map, *name, is_query)));
        }
    }
    Ok(out)
}

/// Edge maps and their matching sketches, index-aligned.
pub type Twins = (Vec<Arc<TrainingItem>>, Vec<Arc<TrainingItem>>);

/// Two drawings of each of `per_class` instances per class: an edge map
/// (`{prefix}-{class}-{i}-a`) and a binary sketch of the same placement with
/// independent stroke style and no clutter (`...-b`, marked as a query).
pub fn render_twins(
    prefix: &str,
    per_class: usize,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<Twins> {
    let mut maps = Vec::new();
    let mut sketches = Vec::new();
    let sketch_cfg = RenderConfig { clutter: 0, ..*cfg };
    for (c, name) in SHAPE_CLASSES.iter().enumerate() {
        for i in 0..per_class {
            let id = format!("{prefix}-{name}-{i}");
            let inst = ShapeInstance::random(c, cfg, &mut substream(seed, &format!("synth/{id}")))?;
            let a = render_instance(&inst, cfg, &mut substream(seed, &format!("synth/{id}/a")))?;
            let b = render_instance(
                &inst,
                &sketch_cfg,
                &mut substream(seed, &format!("synth/{id}/b")),
            )?;
            maps.push(Arc::new(TrainingItem::new(
                format!("{id}-a"),
                a,
                *name,
                false,
            )));
            sketches.push(Arc::new(TrainingItem::new(
                format!("{id}-b"),
                binarize_at(&b, 0.5),
                *name,
                true,
            )));
        }
    }
    Ok((maps, sketches))
}
