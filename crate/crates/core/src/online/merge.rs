use super::OnlineConfig;
use crate::error::{Error, Result};
use crate::raster::{Mask, ProbabilityMap, Rect};
use crate::segnet::SoftLabel;

/// Water / non-water maps from one cue. `valid` restricts where the cue
/// has an opinion (the motion cue's overlap region); `None` means everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct CueMaps {
    pub p_water: ProbabilityMap,
    pub p_non_water: ProbabilityMap,
    pub valid: Option<Mask>,
}

impl CueMaps {
    pub fn new(p_water: ProbabilityMap, p_non_water: ProbabilityMap) -> Self {
        Self {
            p_water,
            p_non_water,
            valid: None,
        }
    }

    pub fn with_validity(mut self, valid: Mask) -> Self {
        self.valid = Some(valid);
        self
    }

    pub fn width(&self) -> usize {
        self.p_water.width()
    }

    pub fn height(&self) -> usize {
        self.p_water.height()
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid.as_ref().is_none_or(|v| v.data()[i])
    }

    fn consistent(&self) -> bool {
        self.p_water.same_size(&self.p_non_water) && self.valid.as_ref().is_none_or(|v| v.same_size(&self.p_water))
    }

    pub(crate) fn transform(&self, f: impl Fn(&ProbabilityMap) -> ProbabilityMap, g: impl Fn(&Mask) -> Mask) -> Self {
        Self {
            p_water: f(&self.p_water),
            p_non_water: f(&self.p_non_water),
            valid: self.valid.as_ref().map(g),
        }
    }

    pub fn crop(&self, r: Rect) -> Self {
        self.transform(|p| p.crop(r), |m| m.crop(r))
    }
}

/// Per-class weighted average of the teacher prediction and the cues.
///
/// Weights come from `cfg.w` / `cfg.xi` in `(teacher, motion, texture)`
/// order. Absent cues, and the motion cue outside its validity region, get
/// weight 0. Override pixels become `(0, 1)`. Pixels where either class ends
/// up with no positive weight are marked invalid.
pub fn merge_labels(
    pg_water: &ProbabilityMap,
    pg_non_water: &ProbabilityMap,
    motion: Option<&CueMaps>,
    texture: Option<&CueMaps>,
    cfg: &OnlineConfig,
    override_mask: Option<&Mask>,
) -> Result<SoftLabel> {
    if !pg_water.same_size(pg_non_water)
        || [motion, texture].iter().flatten().any(|c| !c.p_water.same_size(pg_water) || !c.consistent())
        || override_mask.is_some_and(|m| !m.same_size(pg_water))
    {
        return Err(Error::invalid("merge_labels: map sizes differ"));
    }
    let present = [true, motion.is_some(), texture.is_some()];
    for (name, wts) in [("w", &cfg.w), ("xi", &cfg.xi)] {
        if wts.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidConfig(format!("{name} has negative weights")));
        }
        if !(0..3).any(|i| present[i] && wts[i] > 0.0) {
            return Err(Error::InvalidConfig(format!("all {name} weights of present sources are zero")));
        }
    }
    let n = pg_water.len();
    let mut y_water = vec![0.0f32; n];
    let mut y_non_water = vec![0.0f32; n];
    let mut validity = vec![false; n];
    let mut over = vec![false; n];
    for i in 0..n {
        if override_mask.is_some_and(|m| m.data()[i]) {
            y_non_water[i] = 1.0;
            validity[i] = true;
            over[i] = true;
            continue;
        }
        let mut sw = [(0.0f64, 0.0f64); 2];
        let mut add = |wv: f32, xv: f32, pw: f32, pn: f32| {
            if wv > 0.0 {
                sw[0].0 += wv as f64 * pw as f64;
                sw[0].1 += wv as f64;
            }
            if xv > 0.0 {
                sw[1].0 += xv as f64 * pn as f64;
                sw[1].1 += xv as f64;
            }
        };
        add(cfg.w[0], cfg.xi[0], pg_water.data()[i], pg_non_water.data()[i]);
        if let Some(m) = motion.filter(|m| m.is_valid(i)) {
            add(cfg.w[1], cfg.xi[1], m.p_water.data()[i], m.p_non_water.data()[i]);
        }
        if let Some(t) = texture.filter(|t| t.is_valid(i)) {
            add(cfg.w[2], cfg.xi[2], t.p_water.data()[i], t.p_non_water.data()[i]);
        }
        if sw[0].1 > 0.0 && sw[1].1 > 0.0 {
            y_water[i] = (sw[0].0 / sw[0].1) as f32;
            y_non_water[i] = (sw[1].0 / sw[1].1) as f32;
            validity[i] = true;
        }
    }
    let (w, h) = (pg_water.width(), pg_water.height());
    let plane = |v| ProbabilityMap::from_vec(w, h, v).expect("sized");
    Ok(SoftLabel {
        y_water: plane(y_water),
        y_non_water: plane(y_non_water),
        override_non_water: Mask::from_vec(w, h, over).expect("sized"),
        validity: Mask::from_vec(w, h, validity).expect("sized"),
    })
}
