//! Group-normalized squared parameter error and its image gradient.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{Analyzer, TextureParams};
use crate::error::Result;
use crate::grid::RealGrid;
use crate::layout::{Family, Group, Layout};

const GROUPS: [Group; 6] = [
    Group::Marginal,
    Group::Soc,
    Group::HocMag,
    Group::HocOrient,
    Group::HocXscale,
    Group::HocPhase,
];

/// Relative L2 error of each parameter group and coarse family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResiduals {
    pub groups: Vec<(Group, f64)>,
    pub families: Vec<(Family, f64)>,
}

impl GroupResiduals {
    /// Relative errors of `values` against `target`.
    pub fn of(values: &[f64], target: &TextureParams) -> GroupResiduals {
        let layout = &target.layout;
        let groups = GROUPS
            .iter()
            .map(|&g| {
                let r = layout.group_range(g);
                (g, rel_l2(&values[r.clone()], &target.values[r]))
            })
            .collect();
        let families = [Family::Marginal, Family::Soc, Family::Hoc]
            .iter()
            .map(|&f| {
                let (a, b): (Vec<f64>, Vec<f64>) = layout
                    .blocks()
                    .iter()
                    .filter(|bl| bl.kind.group().family() == f)
                    .flat_map(|bl| bl.range())
                    .map(|i| (values[i], target.values[i]))
                    .unzip();
                (f, rel_l2(&a, &b))
            })
            .collect();
        GroupResiduals { groups, families }
    }

    pub fn group(&self, g: Group) -> f64 {
        self.groups.iter().find(|(x, _)| *x == g).map_or(f64::NAN, |x| x.1)
    }

    pub fn family(&self, f: Family) -> f64 {
        self.families.iter().find(|(x, _)| *x == f).map_or(f64::NAN, |x| x.1)
    }

    /// Largest HOC group residual.
    pub fn max_hoc(&self) -> f64 {
        self.groups
            .iter()
            .filter(|(g, _)| g.is_hoc())
            .fold(0.0, |m, (_, v)| m.max(*v))
    }

    pub fn max(&self) -> f64 {
        self.groups.iter().fold(0.0, |m, (_, v)| m.max(*v))
    }
}

fn rel_l2(a: &[f64], t: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(t).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = t.iter().map(|y| y * y).sum();
    (num / den.max(1e-300)).sqrt()
}

/// Per-slot weights `1 / |t_g|^2` so the loss is the sum of squared group
/// residuals.
pub fn group_weights(target: &TextureParams) -> Vec<f64> {
    let layout: &Layout = &target.layout;
    let mut w = vec![0.0; target.len()];
    for g in GROUPS {
        let r = layout.group_range(g);
        let den: f64 = target.values[r.clone()].iter().map(|y| y * y).sum();
        let wg = 1.0 / den.max(1e-300);
        for i in r {
            w[i] = wg;
        }
    }
    w
}

/// One statistics constraint on a square window of the image.
#[derive(Debug, Clone)]
pub struct Term<'a> {
    pub x0: usize,
    pub y0: usize,
    pub analyzer: &'a Analyzer,
    pub target: &'a TextureParams,
    pub weights: Vec<f64>,
}

impl<'a> Term<'a> {
    pub fn new(x0: usize, y0: usize, analyzer: &'a Analyzer, target: &'a TextureParams) -> Self {
        Term {
            x0,
            y0,
            analyzer,
            target,
            weights: group_weights(target),
        }
    }

    fn size(&self) -> usize {
        self.analyzer.config().pyramid.image_size
    }
}

pub struct Evaluation {
    pub loss: f64,
    pub grad: RealGrid,
    pub residuals: Vec<GroupResiduals>,
}

/// Loss, gradient and residuals of all terms on `image`. Non-finite
/// statistics yield an infinite loss.
pub fn evaluate(image: &RealGrid, terms: &[Term]) -> Result<Evaluation> {
    let parts: Vec<Result<(f64, RealGrid, GroupResiduals)>> = terms
        .par_iter()
        .map(|t| {
            let patch = if t.x0 == 0 && t.y0 == 0 && t.size() == image.width() {
                image.clone()
            } else {
                image.crop(t.x0, t.y0, t.size())?
            };
            let (p, trace) = t.analyzer.forward(&patch)?;
            let mut loss = 0.0;
            let g: Vec<f64> = p
                .values
                .iter()
                .zip(&t.target.values)
                .zip(&t.weights)
                .map(|((v, y), w)| {
                    let d = v - y;
                    loss += w * d * d;
                    2.0 * w * d
                })
                .collect();
            let res = GroupResiduals::of(&p.values, t.target);
            if !loss.is_finite() {
                return Ok((f64::INFINITY, RealGrid::zeros(t.size(), t.size()), res));
            }
            Ok((loss, t.analyzer.vjp(&trace, &g)?, res))
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = RealGrid::zeros(image.width(), image.height());
    let mut residuals = Vec::with_capacity(terms.len());
    for (t, part) in terms.iter().zip(parts) {
        let (l, g, r) = part?;
        loss += l;
        let n = t.size();
        for y in 0..n {
            for x in 0..n {
                let i = (t.y0 + y) * image.width() + t.x0 + x;
                grad.as_mut_slice()[i] += g.as_slice()[y * n + x];
            }
        }
        residuals.push(r);
    }
    Ok(Evaluation {
        loss,
        grad,
        residuals,
    })
}
