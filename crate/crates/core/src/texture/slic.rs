use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::raster::{Mask, Plane};

/// Superpixel labelling.
#[derive(Clone, Debug)]
pub struct SuperpixelMap {
    /// Contiguous ids `0..count`.
    pub labels: Plane<u32>,
    pub count: usize,
    /// Pixels whose 5x5 neighbourhood holds more than one id.
    pub boundary: Mask,
}

#[derive(Clone, Copy, Debug)]
struct Center {
    i: f64,
    x: f64,
    y: f64,
}

fn grid_shape(w: usize, h: usize, n: usize) -> (usize, usize) {
    let ny = ((n as f64 * h as f64 / w as f64).sqrt().round() as usize).clamp(1, h);
    let nx = (n / ny).clamp(1, w);
    (nx, ny)
}

fn gradient(img: &GrayImage, x: usize, y: usize) -> f32 {
    let (x, y) = (x as isize, y as isize);
    let dx = img.at_clamped(x + 1, y) - img.at_clamped(x - 1, y);
    let dy = img.at_clamped(x, y + 1) - img.at_clamped(x, y - 1);
    dx * dx + dy * dy
}

/// Simple linear iterative clustering on a grayscale image.
///
/// Clustering runs in `(compactness * intensity, x / S, y / S)` space with
/// grid step `S = sqrt(HW / n)`, seeds on a regular grid nudged to the lowest
/// gradient in their 3x3 neighbourhood, and a `2S x 2S` search window.
/// Disconnected fragments are merged into the largest adjacent superpixel.
pub fn slic(img: &GrayImage, n_superpixels: usize, compactness: f64, iters: usize) -> Result<SuperpixelMap> {
    let (w, h) = (img.width(), img.height());
    if n_superpixels < 2 {
        return Err(Error::invalid("slic needs at least 2 superpixels"));
    }
    if n_superpixels > w * h / 16 {
        return Err(Error::invalid(format!(
            "{n_superpixels} superpixels is too many for a {w}x{h} image"
        )));
    }
    let s = ((w * h) as f64 / n_superpixels as f64).sqrt();
    let (nx, ny) = grid_shape(w, h, n_superpixels);
    let (cell_w, cell_h) = (w as f64 / nx as f64, h as f64 / ny as f64);
    let half = s.max(cell_w.max(cell_h) / 2.0 + 1.0).ceil() as isize;

    let mut centers = Vec::with_capacity(nx * ny);
    for gy in 0..ny {
        for gx in 0..nx {
            // Seeds sit on cell centres; a strictly lower-gradient neighbour
            // of the nearest pixel moves them onto that pixel.
            let (sx, sy) = ((gx as f64 + 0.5) * cell_w - 0.5, (gy as f64 + 0.5) * cell_h - 0.5);
            let (cx, cy) = ((sx.round() as usize).min(w - 1), (sy.round() as usize).min(h - 1));
            let (mut bx, mut by, mut bg) = (cx, cy, gradient(img, cx, cy));
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (px, py) = (cx as isize + dx, cy as isize + dy);
                    if px < 0 || py < 0 || px >= w as isize || py >= h as isize {
                        continue;
                    }
                    let g = gradient(img, px as usize, py as usize);
                    if g < bg {
                        (bx, by, bg) = (px as usize, py as usize, g);
                    }
                }
            }
            let (fx, fy) = if (bx, by) == (cx, cy) { (sx, sy) } else { (bx as f64, by as f64) };
            centers.push(Center {
                i: img.at(bx, by) as f64,
                x: fx,
                y: fy,
            });
        }
    }

    let mut labels = Plane::from_fn(w, h, |x, y| {
        let gx = ((x as f64 / cell_w) as usize).min(nx - 1);
        let gy = ((y as f64 / cell_h) as usize).min(ny - 1);
        (gy * nx + gx) as u32
    });
    let inv_s2 = 1.0 / (s * s);
    let m2 = compactness * compactness;
    let mut dist = Plane::new(w, h, f64::INFINITY);
    for _ in 0..iters {
        dist.data_mut().fill(f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let x0 = (c.x.round() as isize - half).max(0) as usize;
            let x1 = ((c.x.round() as isize + half) as usize).min(w - 1);
            let y0 = (c.y.round() as isize - half).max(0) as usize;
            let y1 = ((c.y.round() as isize + half) as usize).min(h - 1);
            for y in y0..=y1 {
                let dy = y as f64 - c.y;
                for x in x0..=x1 {
                    let dx = x as f64 - c.x;
                    let di = img.at(x, y) as f64 - c.i;
                    let d = m2 * di * di + (dx * dx + dy * dy) * inv_s2;
                    let slot = dist.get_mut(x, y);
                    if d < *slot {
                        *slot = d;
                        *labels.get_mut(x, y) = k as u32;
                    }
                }
            }
        }
        let mut acc = vec![(0.0f64, 0.0f64, 0.0f64, 0usize); centers.len()];
        for y in 0..h {
            for x in 0..w {
                let a = &mut acc[labels.at(x, y) as usize];
                a.0 += img.at(x, y) as f64;
                a.1 += x as f64;
                a.2 += y as f64;
                a.3 += 1;
            }
        }
        for (c, a) in centers.iter_mut().zip(&acc) {
            if a.3 > 0 {
                let n = a.3 as f64;
                *c = Center {
                    i: a.0 / n,
                    x: a.1 / n,
                    y: a.2 / n,
                };
            }
        }
    }

    let min_size = ((s * s / 8.0) as usize).max(1);
    let (labels, count) = enforce_connectivity(&labels, min_size);
    let boundary = boundary_mask(&labels, 2);
    Ok(SuperpixelMap {
        labels,
        count,
        boundary,
    })
}

/// Relabel so every id is one 4-connected region; fragments (not the
/// largest piece of their label, or smaller than `min_size`) join the
/// largest adjacent region. Returns contiguous labels and their count.
pub(crate) fn enforce_connectivity(labels: &Plane<u32>, min_size: usize) -> (Plane<u32>, usize) {
    let (w, h) = (labels.width(), labels.height());
    let mut comp = Plane::new(w, h, u32::MAX);
    let mut comp_label = Vec::new();
    let mut comp_size = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if comp.data()[start] != u32::MAX {
            continue;
        }
        let id = comp_size.len() as u32;
        let lab = labels.data()[start];
        comp.data_mut()[start] = id;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut nbrs = [usize::MAX; 4];
            if x > 0 {
                nbrs[0] = i - 1;
            }
            if x + 1 < w {
                nbrs[1] = i + 1;
            }
            if y > 0 {
                nbrs[2] = i - w;
            }
            if y + 1 < h {
                nbrs[3] = i + w;
            }
            for j in nbrs.into_iter().filter(|&j| j != usize::MAX) {
                if comp.data()[j] == u32::MAX && labels.data()[j] == lab {
                    comp.data_mut()[j] = id;
                    stack.push(j);
                }
            }
        }
        comp_label.push(lab);
        comp_size.push(size);
    }
    let nc = comp_size.len();

    let mut largest: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
    for c in 0..nc {
        let e = largest.entry(comp_label[c]).or_insert(c);
        if comp_size[c] > comp_size[*e] {
            *e = c;
        }
    }
    let mut root: Vec<Option<usize>> = (0..nc)
        .map(|c| (largest[&comp_label[c]] == c && comp_size[c] >= min_size).then_some(c))
        .collect();
    if root.iter().all(Option::is_none) {
        let big = (0..nc).max_by_key(|&c| (comp_size[c], std::cmp::Reverse(c))).unwrap_or(0);
        root[big] = Some(big);
    }

    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nc];
    for y in 0..h {
        for x in 0..w {
            let a = comp.at(x, y) as usize;
            if x + 1 < w {
                let b = comp.at(x + 1, y) as usize;
                if a != b {
                    adj[a].push(b);
                    adj[b].push(a);
                }
            }
            if y + 1 < h {
                let b = comp.at(x, y + 1) as usize;
                if a != b {
                    adj[a].push(b);
                    adj[b].push(a);
                }
            }
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    let mut group_size: Vec<usize> = (0..nc).map(|c| if root[c] == Some(c) { comp_size[c] } else { 0 }).collect();
    loop {
        let mut pending = false;
        let mut progressed = false;
        for c in 0..nc {
            if root[c].is_some() {
                continue;
            }
            let best = adj[c]
                .iter()
                .filter_map(|&n| root[n])
                .max_by_key(|&r| (group_size[r], std::cmp::Reverse(r)));
            match best {
                Some(r) => {
                    root[c] = Some(r);
                    group_size[r] += comp_size[c];
                    progressed = true;
                }
                None => pending = true,
            }
        }
        if !pending || !progressed {
            break;
        }
    }

    let mut new_id = vec![u32::MAX; nc];
    let mut next = 0u32;
    for c in 0..nc {
        if root[c] == Some(c) {
            new_id[c] = next;
            next += 1;
        }
    }
    let out = comp.map(|&c| {
        let r = root[c as usize].unwrap_or(c as usize);
        new_id[r]
    });
    (out, next as usize)
}

/// True where the `(2r+1)^2` neighbourhood holds another id.
pub(crate) fn boundary_mask(labels: &Plane<u32>, radius: usize) -> Mask {
    let (w, h) = (labels.width() as isize, labels.height() as isize);
    let r = radius as isize;
    Plane::from_fn(labels.width(), labels.height(), |x, y| {
        let l = labels.at(x, y);
        for dy in -r..=r {
            let ny = y as isize + dy;
            if ny < 0 || ny >= h {
                continue;
            }
            for dx in -r..=r {
                let nx = x as isize + dx;
                if nx >= 0 && nx < w && labels.at(nx as usize, ny as usize) != l {
                    return true;
                }
            }
        }
        false
    })
}
