//! Rasterization through an integer display list.
//!
//! A frame is first reduced to a [`RenderKey`]: pixel-snapped primitives per
//! view plus the noise parameters. Rasterizing the key is a pure function, so
//! two states with equal keys produce bit-identical images and the key can be
//! used to memoize anything computed from the image.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::domain::{ArmStyle, DomainSpec, Rgb};
use super::{mix_seed, SimState};

pub const VIEWS: usize = 2;
pub const SIZE: usize = 32;
pub const CHANNELS: usize = 3;
pub const VIEW_LEN: usize = CHANNELS * SIZE * SIZE;
pub const OBS_LEN: usize = VIEWS * VIEW_LEN;

/// Two-view RGB observation, `V×3×32×32`, channel-planar.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Image {
    pub data: Vec<u8>,
}

impl Image {
    pub fn view(&self, v: usize) -> &[u8] {
        &self.data[v * VIEW_LEN..(v + 1) * VIEW_LEN]
    }

    /// Dequantized to [0, 1].
    pub fn to_unit<S: num_traits::Float>(&self, out: &mut Vec<S>) {
        let scale = S::one() / S::from(255.0).expect("finite");
        out.extend(self.data.iter().map(|&b| S::from(b).expect("finite") * scale));
    }

    /// Writes the views side by side as an 8-bit RGB PNG.
    pub fn save_png(&self, path: &Path) -> std::io::Result<()> {
        let w = SIZE * VIEWS;
        let mut rgb = vec![0u8; w * SIZE * 3];
        for v in 0..VIEWS {
            let src = self.view(v);
            for r in 0..SIZE {
                for c in 0..SIZE {
                    for ch in 0..CHANNELS {
                        rgb[(r * w + v * SIZE + c) * 3 + ch] = src[ch * SIZE * SIZE + r * SIZE + c];
                    }
                }
            }
        }
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut enc = png::Encoder::new(file, w as u32, SIZE as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(std::io::Error::other)?;
        writer.write_image_data(&rgb).map_err(std::io::Error::other)?;
        writer.finish().map_err(std::io::Error::other)?;
        Ok(())
    }
}

/// Primitive in pixel coordinates. Radii of curved shapes are in 1/16 px.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Prim {
    Rect { x0: i32, y0: i32, x1: i32, y1: i32, color: Rgb },
    Ellipse { cx: i32, cy: i32, rx16: i32, ry16: i32, color: Rgb },
    Diamond { cx: i32, cy: i32, rx16: i32, ry16: i32, color: Rgb },
    Line { x0: i32, y0: i32, x1: i32, y1: i32, color: Rgb },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RenderKey {
    pub background: Rgb,
    pub views: [Vec<Prim>; VIEWS],
    pub noise_amplitude: u8,
    pub noise_seed: u64,
}

struct ViewMap {
    sx: f64,
    sy: f64,
    y_top: f64,
    off: [i32; 2],
}

impl ViewMap {
    fn new(view: usize, off: [i32; 2]) -> Self {
        match view {
            0 => ViewMap { sx: SIZE as f64, sy: SIZE as f64, y_top: 1.0, off },
            _ => ViewMap { sx: SIZE as f64, sy: 2.0 * SIZE as f64, y_top: 0.5, off },
        }
    }

    fn px(&self, p: [f64; 2]) -> (i32, i32) {
        let x = (p[0] * self.sx).floor() as i32 + self.off[0];
        let y = ((self.y_top - p[1]) * self.sy).floor() as i32 + self.off[1];
        (x, y)
    }

    fn r16(&self, rx: f64, ry: f64) -> (i32, i32) {
        ((rx * self.sx * 16.0).round() as i32, (ry * self.sy * 16.0).round() as i32)
    }
}

fn object_prim(state: &SimState, domain: &DomainSpec, k: usize, m: &ViewMap) -> Prim {
    let o = &state.objects[k];
    let (cx, cy) = m.px(o.pos);
    let color = domain.palette.objects[o.color_id % domain.palette.objects.len()];
    let (rx16, ry16) = m.r16(o.half_size, o.half_size);
    match o.shape {
        super::ShapeTag::Square => {
            let (rx, ry) = (rx16 / 16, ry16 / 16);
            Prim::Rect { x0: cx - rx, y0: cy - ry, x1: cx + rx, y1: cy + ry, color }
        }
        super::ShapeTag::Disc => Prim::Ellipse { cx, cy, rx16, ry16, color },
        super::ShapeTag::Diamond => Prim::Diamond { cx, cy, rx16, ry16, color },
    }
}

fn arm_prims(state: &SimState, domain: &DomainSpec, m: &ViewMap, out: &mut Vec<Prim>) {
    let g = state.gripper_pos;
    let (cx, cy) = m.px(g);
    let pal = &domain.palette;
    let tip = if state.grip_closed { pal.gripper_closed } else { pal.gripper_open };
    let sprite = &domain.arm_sprite;
    let w = sprite.width.max(1) as i32;
    let left = cx - (w - 1) / 2;
    match sprite.style {
        ArmStyle::Column => {
            let (rx16, ry16) = m.r16(sprite.radius, sprite.radius);
            let (rx, ry) = (rx16 / 16, ry16 / 16);
            out.push(Prim::Rect { x0: left, y0: -(SIZE as i32), x1: left + w - 1, y1: cy - ry - 1, color: pal.arm });
            out.push(Prim::Rect { x0: cx - rx, y0: cy - ry, x1: cx + rx, y1: cy + ry, color: tip });
        }
        ArmStyle::Stick => {
            let (bx, by) = m.px([g[0] + 0.3, g[1] + 0.7]);
            out.push(Prim::Line { x0: bx, y0: by, x1: cx, y1: cy, color: pal.arm });
            out.push(Prim::Rect { x0: cx, y0: cy, x1: cx, y1: cy, color: tip });
        }
        ArmStyle::Blob => {
            let r = sprite.radius;
            let (top_x, top_y) = m.px([g[0], g[1] + r]);
            out.push(Prim::Rect { x0: top_x - 1, y0: -(SIZE as i32), x1: top_x + 1, y1: top_y, color: pal.arm });
            for (dx, dy, rr) in [(0.0, 0.0, r), (-0.055, 0.045, 0.6 * r), (0.06, 0.03, 0.55 * r)] {
                let (bx, by) = m.px([g[0] + dx, g[1] + dy]);
                let (rx16, ry16) = m.r16(rr, rr);
                out.push(Prim::Ellipse { cx: bx, cy: by, rx16, ry16, color: tip });
            }
        }
    }
}

/// Display list of one frame. `frame_seed` only matters for noisy domains.
pub fn render_key(state: &SimState, domain: &DomainSpec, frame_seed: u64) -> RenderKey {
    let views = [0, 1].map(|v| {
        let m = ViewMap::new(v, domain.view_offsets[v]);
        let mut prims = Vec::with_capacity(8);
        for k in 0..state.objects.len() {
            if state.held_object != Some(k) {
                prims.push(object_prim(state, domain, k, &m));
            }
        }
        if let Some(k) = state.held_object {
            prims.push(object_prim(state, domain, k, &m));
        }
        if domain.arm_visible {
            arm_prims(state, domain, &m, &mut prims);
        }
        prims
    });
    RenderKey {
        background: domain.background,
        views,
        noise_amplitude: domain.noise_amplitude,
        noise_seed: if domain.noise_amplitude == 0 { 0 } else { frame_seed },
    }
}

fn put(plane: &mut [u8], x: i32, y: i32, c: Rgb) {
    if x >= 0 && y >= 0 && (x as usize) < SIZE && (y as usize) < SIZE {
        let i = y as usize * SIZE + x as usize;
        for ch in 0..CHANNELS {
            plane[ch * SIZE * SIZE + i] = c[ch];
        }
    }
}

fn clip_range(lo: i32, hi: i32) -> std::ops::RangeInclusive<i32> {
    lo.max(0)..=hi.min(SIZE as i32 - 1)
}

/// Pixel set covered by one primitive, clipped to the view.
pub fn prim_pixels(p: &Prim) -> Vec<(i32, i32)> {
    let mut px = Vec::new();
    match *p {
        Prim::Rect { x0, y0, x1, y1, .. } => {
            for y in clip_range(y0, y1) {
                for x in clip_range(x0, x1) {
                    px.push((x, y));
                }
            }
        }
        Prim::Ellipse { cx, cy, rx16, ry16, .. } | Prim::Diamond { cx, cy, rx16, ry16, .. } => {
            let diamond = matches!(p, Prim::Diamond { .. });
            let (rx, ry) = (rx16.max(1) as i64, ry16.max(1) as i64);
            for y in clip_range(cy - ry16 / 16 - 1, cy + ry16 / 16 + 1) {
                for x in clip_range(cx - rx16 / 16 - 1, cx + rx16 / 16 + 1) {
                    let dx = 16 * (x - cx) as i64;
                    let dy = 16 * (y - cy) as i64;
                    let inside = if diamond {
                        dx.abs() * ry + dy.abs() * rx <= rx * ry
                    } else {
                        dx * dx * ry * ry + dy * dy * rx * rx <= rx * rx * ry * ry
                    };
                    if inside {
                        px.push((x, y));
                    }
                }
            }
        }
        Prim::Line { x0, y0, x1, y1, .. } => {
            let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
            let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
            let (mut x, mut y, mut err) = (x0, y0, dx + dy);
            loop {
                if x >= 0 && y >= 0 && (x as usize) < SIZE && (y as usize) < SIZE {
                    px.push((x, y));
                }
                if x == x1 && y == y1 {
                    break;
                }
                let e2 = 2 * err;
                if e2 >= dy {
                    err += dy;
                    x += sx;
                }
                if e2 <= dx {
                    err += dx;
                    y += sy;
                }
            }
        }
    }
    px
}

fn color_of(p: &Prim) -> Rgb {
    match *p {
        Prim::Rect { color, .. }
        | Prim::Ellipse { color, .. }
        | Prim::Diamond { color, .. }
        | Prim::Line { color, .. } => color,
    }
}

pub fn rasterize(key: &RenderKey) -> Image {
    let mut data = vec![0u8; OBS_LEN];
    for v in 0..VIEWS {
        let plane = &mut data[v * VIEW_LEN..(v + 1) * VIEW_LEN];
        for ch in 0..CHANNELS {
            plane[ch * SIZE * SIZE..(ch + 1) * SIZE * SIZE].fill(key.background[ch]);
        }
        for p in &key.views[v] {
            let c = color_of(p);
            for (x, y) in prim_pixels(p) {
                put(plane, x, y, c);
            }
        }
    }
    if key.noise_amplitude > 0 {
        let a = key.noise_amplitude as i32;
        let mut rng = ChaCha8Rng::seed_from_u64(key.noise_seed);
        for b in data.iter_mut() {
            let n: i32 = rng.gen_range(-a..=a);
            *b = (*b as i32 + n).clamp(0, 255) as u8;
        }
    }
    Image { data }
}

/// Both views of one frame.
pub fn render(state: &SimState, domain: &DomainSpec, frame_seed: u64) -> Image {
    rasterize(&render_key(state, domain, frame_seed))
}

/// One view, `3×32×32`.
pub fn render_view(state: &SimState, domain: &DomainSpec, view: usize, frame_seed: u64) -> Vec<u8> {
    render(state, domain, frame_seed).view(view.min(VIEWS - 1)).to_vec()
}

/// Noise seed for frame `t` of an episode.
pub fn frame_seed(episode_seed: u64, t: usize) -> u64 {
    mix_seed(&[episode_seed, t as u64, 0x6e6f697365])
}

/// Mean pixel position of object `k`'s mask in `view`, measured before
/// occlusion and with the view shift removed.
pub fn object_centroid(state: &SimState, domain: &DomainSpec, view: usize, k: usize) -> Option<[f64; 2]> {
    let m = ViewMap::new(view, [0, 0]);
    let px = prim_pixels(&object_prim(state, domain, k, &m));
    if px.is_empty() {
        return None;
    }
    let n = px.len() as f64;
    let (sx, sy) = px.iter().fold((0.0, 0.0), |a, &(x, y)| (a.0 + x as f64, a.1 + y as f64));
    Some([sx / n, sy / n])
}

/// Centroid of pixels exactly matching `color` in a rendered view.
pub fn color_centroid(img: &Image, view: usize, color: Rgb) -> Option<[f64; 2]> {
    let plane = img.view(view);
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for y in 0..SIZE {
        for x in 0..SIZE {
            let i = y * SIZE + x;
            if (0..CHANNELS).all(|ch| plane[ch * SIZE * SIZE + i] == color[ch]) {
                sx += x as f64;
                sy += y as f64;
                n += 1;
            }
        }
    }
    (n > 0).then(|| [sx / n as f64, sy / n as f64])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::domain::{sample_domain_spec, DomainKind};
    use crate::sim::{reset, TaskSpec};

    fn state() -> SimState {
        reset(&TaskSpec::new(0, 1).unwrap(), 11).unwrap()
    }

    #[test]
    fn deterministic() {
        let d = sample_domain_spec(DomainKind::DomainRandomized, 4);
        assert_eq!(render(&state(), &d, 9), render(&state(), &d, 9));
    }

    #[test]
    fn invisible_matches_canonical_off_arm() {
        let s = state();
        let c = render(&s, &DomainSpec::canonical(), 0);
        let i = render(&s, &sample_domain_spec(DomainKind::InvisibleArm, 0), 0);
        let key = render_key(&s, &DomainSpec::canonical(), 0);
        let n_obj = s.objects.len();
        for v in 0..VIEWS {
            let arm: std::collections::HashSet<(i32, i32)> =
                key.views[v][n_obj..].iter().flat_map(prim_pixels).collect();
            let cv = c.view(v);
            let iv = i.view(v);
            let mut arm_seen = false;
            for y in 0..SIZE {
                for x in 0..SIZE {
                    let p = y * SIZE + x;
                    let same = (0..CHANNELS).all(|ch| cv[ch * SIZE * SIZE + p] == iv[ch * SIZE * SIZE + p]);
                    if arm.contains(&(x as i32, y as i32)) {
                        arm_seen |= !same;
                    } else {
                        assert!(same, "view {v} pixel ({x},{y})");
                    }
                }
            }
            if v == 0 {
                assert!(arm_seen);
            }
        }
    }

    #[test]
    fn palettes_change_pixels_not_centroids() {
        let s = state();
        let mut a = sample_domain_spec(DomainKind::DomainRandomized, 1);
        let mut b = sample_domain_spec(DomainKind::DomainRandomized, 2);
        for d in [&mut a, &mut b] {
            d.noise_amplitude = 0;
            d.arm_visible = false;
            d.view_offsets = [[0, 0]; 2];
        }
        let (ia, ib) = (render(&s, &a, 0), render(&s, &b, 0));
        assert_ne!(ia, ib);
        for k in 0..3 {
            let ca = color_centroid(&ia, 0, a.palette.objects[k]).unwrap();
            let cb = color_centroid(&ib, 0, b.palette.objects[k]).unwrap();
            assert_eq!(ca, cb);
        }
    }

    #[test]
    fn noise_depends_on_frame_seed() {
        let mut d = sample_domain_spec(DomainKind::DomainRandomized, 1);
        d.noise_amplitude = 10;
        assert_ne!(render(&state(), &d, 1), render(&state(), &d, 2));
    }

    #[test]
    fn equal_keys_equal_images() {
        let s = state();
        let mut t = s.clone();
        t.gripper_pos[0] += 1e-4;
        let d = DomainSpec::canonical();
        if render_key(&s, &d, 0) == render_key(&t, &d, 0) {
            assert_eq!(render(&s, &d, 0), render(&t, &d, 0));
        }
    }

    #[test]
    fn png_export() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        render(&state(), &DomainSpec::canonical(), 0).save_png(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
    }
}
