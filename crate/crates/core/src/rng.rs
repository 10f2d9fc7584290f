//! Counter-based random draws.
//!
//! Every shock in the branching tree is a pure function of
//! `(master_seed, scenario, step, parent, child)`, so levels can be expanded in
//! any order or on any number of threads with identical results. The block
//! function is Philox4x32-10; the scenario id occupies the high half of the
//! 128-bit counter, which keeps scenario streams disjoint.

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

/// Largest branch factor representable in the counter layout.
pub const MAX_BRANCH_FACTOR: usize = 1 << 8;
/// Largest step index representable in the counter layout.
pub const MAX_STEPS: usize = 1 << 24;

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32 with 10 rounds.
#[inline]
pub fn philox4x32(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform on the open interval (0, 1) from the top 52 bits.
#[inline]
pub fn open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShockStream {
    key: [u32; 2],
}

impl ShockStream {
    pub fn new(master_seed: u64) -> Self {
        let mixed = splitmix64(master_seed);
        ShockStream {
            key: [mixed as u32, (mixed >> 32) as u32],
        }
    }

    /// Raw 128 random bits for one tree edge.
    #[inline]
    pub fn block(&self, scenario: u64, step: usize, parent: u32, child: usize) -> [u32; 4] {
        debug_assert!(step < MAX_STEPS && child < MAX_BRANCH_FACTOR);
        let counter = [
            parent,
            ((step as u32) << 8) | child as u32,
            scenario as u32,
            (scenario >> 32) as u32,
        ];
        philox4x32(counter, self.key)
    }

    /// Independent standard normal pair `(z_m, z_r)` for the edge from `parent`
    /// at `step - 1` to its `child`-th child at `step`.
    #[inline]
    pub fn normal_pair(&self, scenario: u64, step: usize, parent: u32, child: usize) -> (f64, f64) {
        let b = self.block(scenario, step, parent, child);
        let w0 = (b[0] as u64) << 32 | b[1] as u64;
        let w1 = (b[2] as u64) << 32 | b[3] as u64;
        (
            inverse_normal_cdf(open_unit(w0)),
            inverse_normal_cdf(open_unit(w1)),
        )
    }
}

/// Standard normal quantile for `p` in (0, 1): rational approximation
/// followed by one Halley correction against `erfc`.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (-p).ln_1p()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // Halley step; the error term uses the tail that keeps precision.
    let e = if x < 0.0 {
        0.5 * libm::erfc(-x / std::f64::consts::SQRT_2) - p
    } else {
        (1.0 - p) - 0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
    };
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}
