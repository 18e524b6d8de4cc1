#![allow(dead_code)]

use oscflat::io::{parse_config, RunConfig};

pub type C = (f64, f64);

pub fn cmul(a: C, b: C) -> C {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

pub fn cadd(a: C, b: C) -> C {
    (a.0 + b.0, a.1 + b.1)
}

type M2 = [[C; 2]; 2];

fn mmul(a: &M2, b: &M2) -> M2 {
    let mut r = [[(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            r[i][j] = cadd(cmul(a[i][0], b[0][j]), cmul(a[i][1], b[1][j]));
        }
    }
    r
}

/// `exp(-i H dl)` by scaling and squaring of a 30-term Taylor series.
pub fn expm(h11: f64, h12: C, dl: f64) -> M2 {
    let h: M2 = [[(h11, 0.0), h12], [(h12.0, -h12.1), (-h11, 0.0)]];
    let norm = (h11 * h11 + h12.0 * h12.0 + h12.1 * h12.1).sqrt() * dl.abs();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let t = dl / 2f64.powi(squarings as i32);
    // A = -i H t
    let mut a = [[(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            a[i][j] = (h[i][j].1 * t, -h[i][j].0 * t);
        }
    }
    let mut sum: M2 = [[(1.0, 0.0), (0.0, 0.0)], [(0.0, 0.0), (1.0, 0.0)]];
    let mut term = sum;
    for n in 1..30 {
        term = mmul(&term, &a);
        for row in term.iter_mut() {
            for v in row.iter_mut() {
                *v = (v.0 / n as f64, v.1 / n as f64);
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                sum[i][j] = cadd(sum[i][j], term[i][j]);
            }
        }
    }
    for _ in 0..squarings {
        sum = mmul(&sum, &sum);
    }
    sum
}

pub fn apply(u: &M2, a: C, b: C) -> (C, C) {
    (
        cadd(cmul(u[0][0], a), cmul(u[0][1], b)),
        cadd(cmul(u[1][0], a), cmul(u[1][1], b)),
    )
}

/// Inverted-hierarchy configuration text with the standard emission
/// parameters; `extra` lines override earlier keys.
pub fn ih_text(extra: &str) -> String {
    let mut t = String::from(
        "# inverted hierarchy\nhasMatter= 0\nTn= 0\nTs= 0\neps0= 1e-6\nkappa= 0.9\ndm2= -3e-3\ntheta= 0.1\n\
         R0= 50\nRn= 250\ndr= 0.01\nmax_dr= 1\nE0= 0\nE1= 80\nAbins= 50\nPbins= 1\nEbins= 16\nFlvs= 2\nRv= 10\n\
         model= bulb\n",
    );
    for (x, e) in [("ve", 11), ("vbe", 16), ("vx", 25), ("vbx", 25)] {
        t.push_str(&format!("L_{x}= 1e51\nEmean_{x}= {e}\neta_{x}= 3\n"));
    }
    t.push_str(extra);
    t
}

pub fn ih(extra: &str) -> RunConfig {
    parse_config(&ih_text(extra))
        .expect("test configuration parses")
        .config
}

/// Matter block for runs with a density profile.
pub const MATTER: &str =
    "hasMatter= 1\nYe= 0.5\nnb0= 1.63e36\nMns= 1.4\ngs= 11\nS= 5.5\nhNS= 1.6\n";
