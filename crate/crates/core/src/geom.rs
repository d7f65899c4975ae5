//! Grid-and-plane geometry shared by the simulator modules.

use std::fmt;

/// A grid cell. Coordinates are signed so displacement arithmetic cannot
/// underflow at the map border; validity against a map is checked separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Self {
        Cell::new(self.x + dx, self.y + dy)
    }

    pub fn to_vec2(self) -> Vec2 {
        Vec2::new(self.x as f64, self.y as f64)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Euclidean distance between cell centers.
pub fn euclid(a: Cell, b: Cell) -> f64 {
    a.to_vec2().distance(b.to_vec2())
}

/// Chebyshev (king-move) distance.
pub fn chebyshev(a: Cell, b: Cell) -> i32 {
    (a.x - b.x).abs().max((a.y - b.y).abs())
}

/// A real-valued point or displacement in the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Unit vector in the same direction; the zero vector stays zero.
    pub fn unit(self) -> Vec2 {
        let n = self.norm();
        if n == 0.0 {
            Vec2::ZERO
        } else {
            self.scale(1.0 / n)
        }
    }
}

/// Angle in degrees at vertex `v` between the rays `v -> p` and `v -> q`,
/// in [0, 180]. Degenerate geometry (either ray has zero length) is 0.
pub fn angle_at_vertex(v: Vec2, p: Vec2, q: Vec2) -> f64 {
    let a = p - v;
    let b = q - v;
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let cos = ((a.x * b.x + a.y * b.y) / (na * nb)).clamp(-1.0, 1.0);
    cos.acos().to_degrees()
}

/// Angle in degrees between two displacement vectors, in [0, 180].
/// Zero-length input is treated as angle 0.
pub fn angle_between(a: Vec2, b: Vec2) -> f64 {
    angle_at_vertex(Vec2::ZERO, a, b)
}

/// An axis-aligned inclusive cell rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x1: i32,
    pub y1: i32,
    pub x2: i32,
    pub y2: i32,
}

impl Rect {
    pub fn new(x1: i32, y1: i32, x2: i32, y2: i32) -> Self {
        Rect { x1, y1, x2, y2 }
    }

    pub fn is_valid(&self) -> bool {
        self.x1 <= self.x2 && self.y1 <= self.y2
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.x >= self.x1 && c.x <= self.x2 && c.y >= self.y1 && c.y <= self.y2
    }

    pub fn width(&self) -> i32 {
        self.x2 - self.x1 + 1
    }

    pub fn height(&self) -> i32 {
        self.y2 - self.y1 + 1
    }

    pub fn area(&self) -> i64 {
        self.width() as i64 * self.height() as i64
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(
            (self.x1 + self.x2) as f64 / 2.0,
            (self.y1 + self.y2) as f64 / 2.0,
        )
    }

    /// Cells on the rectangle's edge (the region's own outermost cells).
    pub fn border_cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for x in self.x1..=self.x2 {
            for y in self.y1..=self.y2 {
                if x == self.x1 || x == self.x2 || y == self.y1 || y == self.y2 {
                    out.push(Cell::new(x, y));
                }
            }
        }
        out.sort();
        out
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (self.x1..=self.x2).flat_map(move |x| (self.y1..=self.y2).map(move |y| Cell::new(x, y)))
    }
}
