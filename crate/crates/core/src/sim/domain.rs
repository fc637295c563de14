//! Visual domains: palettes, pixel noise, view shifts, arm sprites and the
//! per-domain dynamics perturbation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Physics, GRASP_RADIUS_FACTOR, GRAVITY, NUM_OBJECTS};

pub type Rgb = [u8; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Canonical,
    DomainRandomized,
    ArmRandomized,
    InvisibleArm,
    /// Held-out embodiment: a thin diagonal stick ending at the tool point.
    Stick,
    /// Held-out embodiment: a large irregular hand with a wider grasp.
    BlobHand,
}

impl DomainKind {
    pub fn name(self) -> &'static str {
        match self {
            DomainKind::Canonical => "canonical",
            DomainKind::DomainRandomized => "domain_randomized",
            DomainKind::ArmRandomized => "arm_randomized",
            DomainKind::InvisibleArm => "invisible",
            DomainKind::Stick => "stick",
            DomainKind::BlobHand => "blobhand",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "canonical" => DomainKind::Canonical,
            "domain_randomized" | "dr" => DomainKind::DomainRandomized,
            "arm_randomized" | "arm" => DomainKind::ArmRandomized,
            "invisible" | "invisible_arm" => DomainKind::InvisibleArm,
            "stick" => DomainKind::Stick,
            "blobhand" | "blob_hand" => DomainKind::BlobHand,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmStyle {
    /// Vertical link from the top edge plus a square gripper.
    Column,
    Stick,
    Blob,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSprite {
    pub style: ArmStyle,
    /// Gripper sprite half-extent in world units.
    pub radius: f64,
    /// Link thickness in pixels.
    pub width: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub objects: [Rgb; NUM_OBJECTS],
    pub arm: Rgb,
    pub gripper_open: Rgb,
    pub gripper_closed: Rgb,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub palette: Palette,
    pub background: Rgb,
    /// Maximum absolute per-channel pixel noise, in 8-bit levels.
    pub noise_amplitude: u8,
    /// Pixel shift (dx, dy) per view.
    pub view_offsets: [[i32; 2]; 2],
    pub arm_visible: bool,
    pub arm_sprite: ArmSprite,
    pub physics: Physics,
}

impl DomainSpec {
    pub fn canonical() -> Self {
        DomainSpec {
            kind: DomainKind::Canonical,
            palette: Palette {
                objects: [[220, 40, 40], [40, 190, 60], [50, 80, 230]],
                arm: [150, 150, 150],
                gripper_open: [240, 240, 240],
                gripper_closed: [250, 200, 40],
            },
            background: [20, 20, 28],
            noise_amplitude: 0,
            view_offsets: [[0, 0], [0, 0]],
            arm_visible: true,
            arm_sprite: ArmSprite {
                style: ArmStyle::Column,
                radius: 0.04,
                width: 1,
            },
            physics: Physics::default(),
        }
    }
}

fn color(rng: &mut ChaCha8Rng) -> Rgb {
    [rng.gen(), rng.gen(), rng.gen()]
}

fn perturbed(rng: &mut ChaCha8Rng) -> Physics {
    Physics {
        gravity: GRAVITY * rng.gen_range(0.9..=1.1),
        grasp_radius_factor: GRASP_RADIUS_FACTOR * rng.gen_range(0.9..=1.1),
        ..Physics::default()
    }
}

fn randomize_arm(d: &mut DomainSpec, rng: &mut ChaCha8Rng) {
    d.palette.arm = color(rng);
    d.palette.gripper_open = color(rng);
    d.palette.gripper_closed = color(rng);
    d.arm_sprite.radius = rng.gen_range(0.025..0.06);
    d.arm_sprite.width = rng.gen_range(1..=3);
}

/// Seeded domain sample. Ranges: colors uniform over 8-bit RGB, noise
/// amplitude in [0, 24], view shifts in [−2, 2] px, gripper radius in
/// [0.025, 0.06), link width 1–3 px, gravity and grasp radius ±10%.
pub fn sample_domain_spec(kind: DomainKind, seed: u64) -> DomainSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = DomainSpec::canonical();
    d.kind = kind;
    match kind {
        DomainKind::Canonical => {}
        DomainKind::InvisibleArm => d.arm_visible = false,
        DomainKind::ArmRandomized => {
            randomize_arm(&mut d, &mut rng);
            d.physics = perturbed(&mut rng);
        }
        DomainKind::DomainRandomized => {
            for c in d.palette.objects.iter_mut() {
                *c = color(&mut rng);
            }
            d.background = color(&mut rng);
            randomize_arm(&mut d, &mut rng);
            d.noise_amplitude = rng.gen_range(0..=24);
            for v in d.view_offsets.iter_mut() {
                *v = [rng.gen_range(-2..=2), rng.gen_range(-2..=2)];
            }
            d.physics = perturbed(&mut rng);
        }
        DomainKind::Stick => {
            d.palette.arm = [170, 120, 60];
            d.palette.gripper_open = [170, 120, 60];
            d.palette.gripper_closed = [255, 255, 255];
            d.arm_sprite = ArmSprite {
                style: ArmStyle::Stick,
                radius: 0.0,
                width: 1,
            };
        }
        DomainKind::BlobHand => {
            d.palette.arm = [230, 170, 140];
            d.palette.gripper_open = [230, 170, 140];
            d.palette.gripper_closed = [200, 130, 100];
            d.arm_sprite = ArmSprite {
                style: ArmStyle::Blob,
                radius: 0.07,
                width: 3,
            };
            d.physics.grasp_radius_factor = 1.6;
        }
    }
    d
}
