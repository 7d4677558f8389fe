//! Built-in product categories and their procedural fixtures.
//!
//! Each category carries its component schema, the flat colours used when
//! drawing mock concept images, and the reference knowledge the mock
//! providers answer from: which component realises each function, the
//! function-solution pairs a concept of that category exhibits, alternative
//! solutions and which functions have no visible footprint.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mask::LabelMask;
use crate::model::{FunctionSolutionPair, RasterImage};
use crate::segmentation::ClassSchema;

pub const BACKGROUND_RGB: [u8; 3] = [248, 248, 246];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Car,
    NerfGun,
    RobotDog,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown category {0:?}; expected car, nerf-gun or robot-dog")]
pub struct UnknownCategory(pub String);

impl FromStr for Category {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        match norm.as_str() {
            "car" => Ok(Self::Car),
            "nerfgun" => Ok(Self::NerfGun),
            "robotdog" => Ok(Self::RobotDog),
            _ => Err(UnknownCategory(s.to_owned())),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

struct Fixture {
    components: &'static [&'static str],
    colors: &'static [[u8; 3]],
    /// function -> component label
    knowledge: &'static [(&'static str, &'static str)],
    /// function-solution pairs of a typical concept, in extraction order
    pairs: &'static [(&'static str, &'static str)],
    alternatives: &'static [(&'static str, [&'static str; 2])],
    invisible: &'static [&'static str],
    /// functions scored by the mapping evaluator
    eval_functions: &'static [&'static str],
    keywords: &'static [&'static str],
}

const CAR: Fixture = Fixture {
    components: &["body", "window", "wheel", "light", "bumper"],
    colors: &[
        [214, 92, 150],
        [96, 150, 210],
        [45, 45, 50],
        [250, 215, 80],
        [150, 150, 160],
    ],
    knowledge: &[
        ("headlight", "light"),
        ("headlight shape", "light"),
        ("front bumper", "bumper"),
        ("windshield", "window"),
        ("mirror", "body"),
        ("trunk", "body"),
        ("tire", "wheel"),
        ("suspension", "wheel"),
        ("wheel size", "wheel"),
        ("sunroof", "window"),
        ("cargo bed", "body"),
        ("engine material", "body"),
    ],
    pairs: &[
        ("wheel size", "19 inches"),
        ("sunroof", "panoramic"),
        ("headlight shape", "LED strip"),
        ("front bumper", "chrome trim"),
        ("windshield", "raked glass"),
        ("cargo bed", "open pickup bed"),
        ("engine material", "aluminum block"),
    ],
    alternatives: &[
        ("wheel size", ["20 inches", "18 inches"]),
        ("sunroof", ["fixed glass roof", "no sunroof"]),
        ("headlight shape", ["round halogen", "split matrix"]),
        ("front bumper", ["off-road steel", "body-colored"]),
        ("windshield", ["upright glass", "wraparound glass"]),
        ("cargo bed", ["covered bed", "extended bed"]),
        ("engine material", ["cast iron", "carbon composite"]),
    ],
    invisible: &["engine material", "suspension"],
    eval_functions: &[
        "headlight",
        "front bumper",
        "windshield",
        "mirror",
        "trunk",
        "tire",
        "suspension",
    ],
    keywords: &["car", "truck", "pickup", "suv", "sedan", "vehicle"],
};

const NERF_GUN: Fixture = Fixture {
    components: &["barrel", "body", "grip"],
    colors: &[[245, 140, 40], [70, 120, 220], [55, 55, 60]],
    knowledge: &[
        ("muzzle", "barrel"),
        ("barrel", "barrel"),
        ("barrel length", "barrel"),
        ("rear sight", "body"),
        ("safety", "grip"),
        ("trigger", "grip"),
        ("gripper", "grip"),
        ("grip texture", "grip"),
        ("magazine", "body"),
        ("firing mechanism", "body"),
    ],
    pairs: &[
        ("barrel length", "30 cm"),
        ("muzzle", "orange tip"),
        ("magazine", "12-dart drum"),
        ("rear sight", "flip-up"),
        ("trigger", "two-stage"),
        ("grip texture", "rubberized"),
        ("firing mechanism", "spring plunger"),
    ],
    alternatives: &[
        ("barrel length", ["45 cm", "20 cm"]),
        ("muzzle", ["flared tip", "suppressor style"]),
        ("magazine", ["6-dart clip", "18-dart box"]),
        ("rear sight", ["fixed notch", "red dot"]),
        ("trigger", ["single-stage", "pump action"]),
        ("grip texture", ["smooth", "finger grooves"]),
        ("firing mechanism", ["flywheel", "air pressure"]),
    ],
    invisible: &["firing mechanism"],
    eval_functions: &[
        "muzzle",
        "barrel",
        "rear sight",
        "safety",
        "trigger",
        "gripper",
        "magazine",
    ],
    keywords: &["nerf", "blaster", "gun", "dart"],
};

const ROBOT_DOG: Fixture = Fixture {
    components: &["head", "torso", "leg"],
    colors: &[[235, 190, 70], [130, 135, 145], [60, 62, 75]],
    knowledge: &[
        ("eyes", "head"),
        ("eye style", "head"),
        ("ears", "head"),
        ("ear shape", "head"),
        ("load", "torso"),
        ("payload rack", "torso"),
        ("tail", "torso"),
        ("hip", "leg"),
        ("ankle", "leg"),
        ("claw", "leg"),
        ("foot", "leg"),
        ("battery chemistry", "torso"),
    ],
    pairs: &[
        ("eye style", "LED visor"),
        ("ear shape", "pointed"),
        ("payload rack", "flat deck"),
        ("tail", "antenna"),
        ("hip", "exposed actuators"),
        ("foot", "rubber pads"),
        ("battery chemistry", "lithium-ion"),
    ],
    alternatives: &[
        ("eye style", ["twin lenses", "camera array"]),
        ("ear shape", ["rounded", "folded"]),
        ("payload rack", ["saddle bags", "robotic arm mount"]),
        ("tail", ["short stub", "no tail"]),
        ("hip", ["covered joints", "spring-loaded"]),
        ("foot", ["claws", "wheels"]),
        ("battery chemistry", ["solid-state", "swappable packs"]),
    ],
    invisible: &["battery chemistry"],
    eval_functions: &["eyes", "ears", "load", "tail", "hip", "ankle", "claw"],
    keywords: &["dog", "robot", "quadruped", "pet"],
};

impl Category {
    pub const ALL: [Category; 3] = [Category::Car, Category::NerfGun, Category::RobotDog];

    fn fixture(self) -> &'static Fixture {
        match self {
            Self::Car => &CAR,
            Self::NerfGun => &NERF_GUN,
            Self::RobotDog => &ROBOT_DOG,
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Self::Car => "car",
            Self::NerfGun => "nerf-gun",
            Self::RobotDog => "robot-dog",
        }
    }

    /// Name used in generation prompts.
    pub fn object_name(self) -> &'static str {
        match self {
            Self::Car => "car",
            Self::NerfGun => "Nerf Gun",
            Self::RobotDog => "Robot Dog",
        }
    }

    pub fn schema(self) -> ClassSchema {
        ClassSchema::new(self.slug(), self.fixture().components)
    }

    /// Flat colour of each class, background first.
    pub fn class_colors(self) -> Vec<[u8; 3]> {
        std::iter::once(BACKGROUND_RGB)
            .chain(self.fixture().colors.iter().copied())
            .collect()
    }

    /// The component label that realises `function`, if known.
    pub fn component_for(self, function: &str) -> Option<&'static str> {
        let f = function.trim().to_ascii_lowercase();
        self.fixture()
            .knowledge
            .iter()
            .find(|(k, _)| *k == f)
            .map(|(_, c)| *c)
    }

    pub fn reference_pairs(self) -> Vec<FunctionSolutionPair> {
        self.fixture()
            .pairs
            .iter()
            .map(|(f, s)| FunctionSolutionPair::new(*f, *s))
            .collect()
    }

    pub fn alternatives_for(self, function: &str) -> Option<[&'static str; 2]> {
        let f = function.trim().to_ascii_lowercase();
        self.fixture()
            .alternatives
            .iter()
            .find(|(k, _)| *k == f)
            .map(|(_, a)| *a)
    }

    pub fn is_visible(self, function: &str) -> bool {
        let f = function.trim().to_ascii_lowercase();
        !self.fixture().invisible.contains(&f.as_str())
    }

    pub fn eval_functions(self) -> &'static [&'static str] {
        self.fixture().eval_functions
    }

    /// Reference function -> component assignments for the evaluated
    /// functions.
    pub fn gold_mapping(self) -> Vec<(&'static str, &'static str)> {
        self.eval_functions()
            .iter()
            .map(|f| (*f, self.component_for(f).expect("eval functions are known")))
            .collect()
    }

    /// Guess the category a free-text brief talks about.
    pub fn infer(text: &str) -> Option<Category> {
        let lower = text.to_ascii_lowercase();
        let words: Vec<&str> = lower
            .split(|c: char| !c.is_ascii_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        [Category::NerfGun, Category::RobotDog, Category::Car]
            .into_iter()
            .find(|c| {
                c.fixture()
                    .keywords
                    .iter()
                    .any(|k| words.contains(k))
            })
    }

    /// Draw a flat-coloured concept of this category.
    ///
    /// The same `(size, seed)` always yields the same image and mask; the
    /// mask labels every pixel with the class whose colour was painted there.
    pub fn render(self, size: u32, seed: u64) -> (RasterImage, LabelMask) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (self as u64).wrapping_mul(0x9E37_79B9));
        let jitter = Jitter {
            dx: rng.gen_range(-0.05..0.05),
            dy: rng.gen_range(-0.05..0.05),
            scale: rng.gen_range(0.88..1.04),
            a: rng.gen_range(-1.0..1.0),
            b: rng.gen_range(-1.0..1.0),
        };
        let shapes = match self {
            Self::Car => car_layout(&jitter),
            Self::NerfGun => nerf_layout(&jitter),
            Self::RobotDog => dog_layout(&jitter),
        };
        paint(size, &self.class_colors(), &shapes, &jitter)
    }
}

struct Jitter {
    dx: f64,
    dy: f64,
    scale: f64,
    /// free shape parameters in [-1, 1]
    a: f64,
    b: f64,
}

enum Shape {
    Rect(f64, f64, f64, f64),
    Ellipse(f64, f64, f64, f64),
    Poly(Vec<(f64, f64)>),
}

impl Shape {
    fn contains(&self, (x, y): (f64, f64)) -> bool {
        match self {
            Shape::Rect(x0, y0, x1, y1) => x >= *x0 && x < *x1 && y >= *y0 && y < *y1,
            Shape::Ellipse(cx, cy, rx, ry) => {
                ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0
            }
            Shape::Poly(pts) => {
                let mut inside = false;
                let mut j = pts.len() - 1;
                for i in 0..pts.len() {
                    let (xi, yi) = pts[i];
                    let (xj, yj) = pts[j];
                    if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
        }
    }
}

fn car_layout(j: &Jitter) -> Vec<(u8, Shape)> {
    let cab = 0.04 * j.a;
    let wheel_r = 0.085 + 0.012 * j.b;
    vec![
        (1, Shape::Rect(0.10, 0.46, 0.90, 0.68)),
        (
            1,
            Shape::Poly(vec![
                (0.28 + cab, 0.46),
                (0.36 + cab, 0.28),
                (0.62, 0.28),
                (0.70, 0.46),
            ]),
        ),
        (
            2,
            Shape::Poly(vec![
                (0.33 + cab, 0.45),
                (0.39 + cab, 0.31),
                (0.60, 0.31),
                (0.66, 0.45),
            ]),
        ),
        (4, Shape::Rect(0.84, 0.48, 0.90, 0.54)),
        (5, Shape::Rect(0.87, 0.58, 0.94, 0.67)),
        (5, Shape::Rect(0.06, 0.58, 0.12, 0.67)),
        (3, Shape::Ellipse(0.27, 0.68, wheel_r, wheel_r)),
        (3, Shape::Ellipse(0.73, 0.68, wheel_r, wheel_r)),
    ]
}

fn nerf_layout(j: &Jitter) -> Vec<(u8, Shape)> {
    let barrel_len = 0.22 + 0.05 * j.a;
    let grip_tilt = 0.04 * j.b;
    vec![
        (2, Shape::Rect(0.22, 0.34, 0.70, 0.54)),
        (2, Shape::Rect(0.48, 0.54, 0.60, 0.74)),
        (1, Shape::Rect(0.70, 0.39, 0.70 + barrel_len, 0.49)),
        (
            3,
            Shape::Poly(vec![
                (0.26, 0.54),
                (0.38, 0.54),
                (0.36 - grip_tilt, 0.82),
                (0.24 - grip_tilt, 0.82),
            ]),
        ),
    ]
}

fn dog_layout(j: &Jitter) -> Vec<(u8, Shape)> {
    let leg_w = 0.07 + 0.01 * j.a;
    let head_y = 0.28 + 0.03 * j.b;
    let mut shapes = vec![
        (2, Shape::Rect(0.22, 0.36, 0.74, 0.56)),
        (2, Shape::Rect(0.12, 0.33, 0.23, 0.38)),
        (1, Shape::Ellipse(0.80, head_y, 0.11, 0.09)),
    ];
    for x in [0.25, 0.38, 0.56, 0.67] {
        shapes.push((3, Shape::Rect(x, 0.56, x + leg_w, 0.84)));
    }
    shapes
}

fn paint(
    size: u32,
    colors: &[[u8; 3]],
    shapes: &[(u8, Shape)],
    jitter: &Jitter,
) -> (RasterImage, LabelMask) {
    let mut labels = vec![0u8; size as usize * size as usize];
    let inv = 1.0 / size as f64;
    for y in 0..size {
        for x in 0..size {
            // undo the jitter so shapes are tested in layout space
            let (px, py) = ((x as f64 + 0.5) * inv, (y as f64 + 0.5) * inv);
            let lx = (px - 0.5 - jitter.dx) / jitter.scale + 0.5;
            let ly = (py - 0.5 - jitter.dy) / jitter.scale + 0.5;
            let mut label = 0;
            for (class, shape) in shapes {
                if shape.contains((lx, ly)) {
                    label = *class;
                }
            }
            labels[(y * size + x) as usize] = label;
        }
    }
    let mut pixels = Vec::with_capacity(labels.len() * 4);
    for &l in &labels {
        let [r, g, b] = colors[l as usize];
        pixels.extend_from_slice(&[r, g, b, 255]);
    }
    (
        RasterImage::new(size, size, pixels).expect("buffer sized from size"),
        LabelMask::new(size, size, labels).expect("buffer sized from size"),
    )
}
