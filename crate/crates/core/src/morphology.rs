//! Exact Euclidean distance transform and disk morphology.
//!
//! The transform is the separable lower-envelope construction over squared
//! distances. All arithmetic stays on integers represented in `f64`, so
//! results are exact for any raster that fits in memory.

use crate::model::{BinaryMask, Rect};

/// Squared distance and nearest site for every pixel of a raster.
#[derive(Debug, Clone)]
pub struct DistanceField {
    width: usize,
    height: usize,
    sq: Vec<f64>,
    nearest: Vec<usize>,
}

const NO_SITE: usize = usize::MAX;

impl DistanceField {
    /// Builds the field for the sites selected by `is_site(x, y)`.
    pub fn new(width: usize, height: usize, is_site: impl Fn(usize, usize) -> bool) -> Self {
        let n = width * height;
        // vertical pass: nearest site row in the same column, by a forward
        // and a backward sweep
        let mut col_site = vec![NO_SITE; n];
        for y in 0..height {
            for x in 0..width {
                let i = y * width + x;
                if is_site(x, y) {
                    col_site[i] = y;
                } else if y > 0 {
                    col_site[i] = col_site[i - width];
                }
            }
        }
        for y in (0..height.saturating_sub(1)).rev() {
            for x in 0..width {
                let i = y * width + x;
                let below = col_site[i + width];
                if below != NO_SITE && (col_site[i] == NO_SITE || below.abs_diff(y) < col_site[i].abs_diff(y)) {
                    col_site[i] = below;
                }
            }
        }

        let mut scratch = Envelope::default();
        let mut sq = vec![f64::INFINITY; n];
        let mut nearest = vec![NO_SITE; n];
        let mut f = vec![0.0; width];
        let mut d = vec![0.0; width];
        let mut arg = vec![0usize; width];
        for y in 0..height {
            let row = &col_site[y * width..(y + 1) * width];
            for (fx, &site) in f.iter_mut().zip(row) {
                *fx = if site == NO_SITE {
                    f64::INFINITY
                } else {
                    let dy = site.abs_diff(y) as f64;
                    dy * dy
                };
            }
            scratch.transform(&f, &mut d, &mut arg);
            for x in 0..width {
                if d[x].is_finite() {
                    let sx = arg[x];
                    sq[y * width + x] = d[x];
                    nearest[y * width + x] = row[sx] * width + sx;
                }
            }
        }
        Self {
            width,
            height,
            sq,
            nearest,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Squared Euclidean distance to the nearest site, infinite when there
    /// are no sites.
    pub fn sq_distance(&self, x: usize, y: usize) -> f64 {
        self.sq[y * self.width + x]
    }

    pub fn distance(&self, x: usize, y: usize) -> f64 {
        self.sq_distance(x, y).sqrt()
    }

    pub fn nearest(&self, x: usize, y: usize) -> Option<(usize, usize)> {
        let i = self.nearest[y * self.width + x];
        (i != NO_SITE).then(|| (i % self.width, i / self.width))
    }
}

#[derive(Default)]
struct Envelope {
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    /// 1-D squared distance transform of the sampled function `f`, where
    /// infinite samples are not sites.
    fn transform(&mut self, f: &[f64], d: &mut [f64], arg: &mut [usize]) {
        self.sites.clear();
        self.bounds.clear();
        for (q, &fq) in f.iter().enumerate() {
            if !fq.is_finite() {
                continue;
            }
            loop {
                let Some(&p) = self.sites.last() else {
                    self.sites.push(q);
                    self.bounds.push(f64::NEG_INFINITY);
                    break;
                };
                let (qf, pf) = (q as f64, p as f64);
                let s = ((fq + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf);
                if s <= *self.bounds.last().expect("bounds track sites") {
                    self.sites.pop();
                    self.bounds.pop();
                } else {
                    self.sites.push(q);
                    self.bounds.push(s);
                    break;
                }
            }
        }
        if self.sites.is_empty() {
            d.fill(f64::INFINITY);
            return;
        }
        let mut k = 0;
        for x in 0..f.len() {
            let xf = x as f64;
            while k + 1 < self.sites.len() && self.bounds[k + 1] < xf {
                k += 1;
            }
            let site = self.sites[k];
            let dx = xf - site as f64;
            d[x] = dx * dx + f[site];
            arg[x] = site;
        }
    }
}

/// Largest integer offset `d` with `d * d <= r2`.
fn reach(r2: f64) -> usize {
    let mut d = r2.max(0.0).sqrt() as usize;
    while ((d + 1) * (d + 1)) as f64 <= r2 {
        d += 1;
    }
    while d > 0 && (d * d) as f64 > r2 {
        d -= 1;
    }
    d
}

/// Distance field of `sites` restricted to `window`; coordinates in the
/// returned field are relative to the window origin.
pub(crate) fn window_field(sites: &BinaryMask, window: Rect) -> DistanceField {
    DistanceField::new(window.width, window.height, |x, y| {
        sites.get(window.x + x, window.y + y)
    })
}

/// Rows of a window packed into 64-bit words, bit `x % 64` of word `x / 64`
/// holding column `x`. Bits past the row width stay clear.
struct RowBits {
    width: usize,
    words: usize,
    data: Vec<u64>,
}

impl RowBits {
    fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let words = width.div_ceil(64);
        let mut data = vec![0u64; words * height];
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    data[y * words + x / 64] |= 1 << (x % 64);
                }
            }
        }
        Self { width, words, data }
    }

    fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.words + x / 64] >> (x % 64) & 1 == 1
    }

    fn row(&self, y: usize) -> &[u64] {
        &self.data[y * self.words..(y + 1) * self.words]
    }
}

/// `out[x] = src[x + k]` for `k >= 0`, zero past the end.
fn shift_down(src: &[u64], k: usize, out: &mut [u64]) {
    let (wk, bk) = (k / 64, k % 64);
    for i in 0..out.len() {
        let lo = src.get(i + wk).copied().unwrap_or(0);
        let hi = src.get(i + wk + 1).copied().unwrap_or(0);
        out[i] = if bk == 0 { lo } else { lo >> bk | hi << (64 - bk) };
    }
}

/// `out[x] = src[x - k]` for `k >= 0`, zero before the start.
fn shift_up(src: &[u64], k: usize, out: &mut [u64]) {
    let (wk, bk) = (k / 64, k % 64);
    for i in 0..out.len() {
        let lo = if i >= wk + 1 { src[i - wk - 1] } else { 0 };
        let hi = if i >= wk { src[i - wk] } else { 0 };
        out[i] = if bk == 0 { hi } else { hi << bk | lo >> (64 - bk) };
    }
}

/// OR of `row` over offsets `0..=half` in one direction, by doubling.
fn sweep(row: &[u64], half: usize, out: &mut [u64], tmp: &mut [u64], shift: fn(&[u64], usize, &mut [u64])) {
    out.copy_from_slice(row);
    let mut span = 0;
    while span < half {
        let step = (span + 1).min(half - span);
        shift(out, step, tmp);
        for (o, t) in out.iter_mut().zip(tmp.iter()) {
            *o |= *t;
        }
        span += step;
    }
}

/// Horizontal dilation of one row by `half` pixels on each side.
fn spread_row(row: &[u64], half: usize, width: usize, out: &mut [u64], tmp: &mut [u64], other: &mut [u64]) {
    sweep(row, half, out, tmp, shift_down);
    sweep(row, half, other, tmp, shift_up);
    for (o, v) in out.iter_mut().zip(other.iter()) {
        *o |= *v;
    }
    if width % 64 != 0 {
        let last = out.len() - 1;
        out[last] &= (1u64 << (width % 64)) - 1;
    }
}

/// Dilation of `src` by the disk of squared radius `r2`.
fn dilate_bits(src: &RowBits, height: usize, r2: f64) -> RowBits {
    let (words, width) = (src.words, src.width);
    let max_dy = reach(r2);
    let halves: Vec<usize> = (0..=max_dy).map(|dy| reach(r2 - (dy * dy) as f64)).collect();
    let mut distinct = halves.clone();
    distinct.sort_unstable();
    distinct.dedup();
    // spread[k] holds every row spread by distinct[k]
    let (mut tmp, mut other) = (vec![0u64; words], vec![0u64; words]);
    let spread: Vec<Vec<u64>> = distinct
        .iter()
        .map(|&half| {
            let mut all = vec![0u64; words * height];
            for y in 0..height {
                spread_row(src.row(y), half, width, &mut all[y * words..(y + 1) * words], &mut tmp, &mut other);
            }
            all
        })
        .collect();
    let mut data = vec![0u64; words * height];
    for y in 0..height {
        let out = &mut data[y * words..(y + 1) * words];
        for (dy, half) in halves.iter().enumerate() {
            let k = distinct.binary_search(half).expect("listed");
            for sy in [y.checked_sub(dy), (dy > 0).then_some(y + dy).filter(|&v| v < height)]
                .into_iter()
                .flatten()
            {
                for (o, v) in out.iter_mut().zip(&spread[k][sy * words..(sy + 1) * words]) {
                    *o |= *v;
                }
            }
        }
    }
    RowBits { width, words, data }
}

/// Dilation by a Euclidean disk: a pixel is set when some mask pixel lies
/// within `radius` of it.
pub fn dilate_disk(mask: &BinaryMask, radius: f64) -> BinaryMask {
    let (w, h) = mask.dims();
    let Some(bbox) = mask.bbox() else {
        return mask.clone();
    };
    let r2 = radius * radius;
    let window = bbox.expand_within(reach(r2) + 1, w, h);
    let src = RowBits::from_fn(window.width, window.height, |x, y| mask.get(window.x + x, window.y + y));
    let grown = dilate_bits(&src, window.height, r2);
    let mut out = mask.clone();
    for y in 0..window.height {
        for x in 0..window.width {
            if grown.get(x, y) {
                out.set(window.x + x, window.y + y, true);
            }
        }
    }
    out
}

/// Erosion by a Euclidean disk: a mask pixel survives when no unset pixel
/// of the frame lies within `radius` of it. Pixels beyond the frame edge
/// do not erode.
pub fn erode_disk(mask: &BinaryMask, radius: f64) -> BinaryMask {
    let (w, h) = mask.dims();
    let Some(bbox) = mask.bbox() else {
        return mask.clone();
    };
    let r2 = radius * radius;
    let window = bbox.expand_within(reach(r2) + 1, w, h);
    let holes = RowBits::from_fn(window.width, window.height, |x, y| !mask.get(window.x + x, window.y + y));
    let eaten = dilate_bits(&holes, window.height, r2);
    let mut out = mask.clone();
    for y in 0..window.height {
        for x in 0..window.width {
            if eaten.get(x, y) {
                out.set(window.x + x, window.y + y, false);
            }
        }
    }
    out
}
