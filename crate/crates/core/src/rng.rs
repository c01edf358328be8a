//! Counter-based random number generation.
//!
//! Monte Carlo paths are parallelized by giving every (seed, domain, index)
//! triple its own Philox4x32-10 stream. Streams are cheap to construct, can be
//! replayed from any point, and produce the same draws regardless of thread
//! count. Gaussian variates come from the inverse normal CDF applied to the
//! 53-bit uniforms, so a path is a pure function of its counters.

/// Domain tags separating the independent random streams of one experiment.
pub mod domains {
    pub const JUMPS: u64 = 0x4a55;
    pub const PATH_NOISE: u64 = 0x5041;
    pub const PATH_V: u64 = 0x5056;
    pub const BRIDGE: u64 = 0x4252;
    pub const FILTER_NOISE: u64 = 0x4649;
    pub const INIT: u64 = 0x494e;
    pub const INITIAL_MARK: u64 = 0x4d4b;
    pub const THINNING: u64 = 0x5448;
    pub const TIMECHANGE: u64 = 0x5443;
    pub const PERTURB: u64 = 0x5054;
    pub const RESAMPLE: u64 = 0x5253;
    pub const ORACLE: u64 = 0x4f52;
    pub const SEARCH: u64 = 0x5345;
    pub const QUANTIZE: u64 = 0x5155;
}

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One Philox4x32-10 block.
#[inline]
fn philox4x32(mut key: [u32; 2], mut ctr: [u32; 4]) -> [u32; 4] {
    for _ in 0..10 {
        let p0 = (ctr[0] as u64).wrapping_mul(PHILOX_M0 as u64);
        let p1 = (ctr[2] as u64).wrapping_mul(PHILOX_M1 as u64);
        let (lo0, hi0) = (p0 as u32, (p0 >> 32) as u32);
        let (lo1, hi1) = (p1 as u32, (p1 >> 32) as u32);
        ctr = [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0];
        key[0] = key[0].wrapping_add(PHILOX_W0);
        key[1] = key[1].wrapping_add(PHILOX_W1);
    }
    ctr
}

/// A deterministic, splittable random stream.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: [u32; 2],
    block: u64,
    buf: [u32; 4],
    pos: usize,
}

impl CounterRng {
    /// Stream keyed by (seed, domain, index). Distinct triples give
    /// statistically independent streams.
    pub fn from_stream(seed: u64, domain: u64, index: u64) -> Self {
        let mut h = splitmix(seed);
        h = splitmix(h ^ domain);
        h = splitmix(h ^ index);
        CounterRng {
            key: [h as u32, (h >> 32) as u32],
            block: 0,
            buf: [0; 4],
            pos: 4,
        }
    }

    /// Plain single stream from a seed.
    pub fn from_seed(seed: u64) -> Self {
        Self::from_stream(seed, 0, 0)
    }

    /// Derive an independent child stream; does not consume from `self`.
    pub fn substream(&self, domain: u64, index: u64) -> Self {
        let k = ((self.key[1] as u64) << 32) | self.key[0] as u64;
        let mut h = splitmix(k ^ domain);
        h = splitmix(h ^ index);
        CounterRng {
            key: [h as u32, (h >> 32) as u32],
            block: 0,
            buf: [0; 4],
            pos: 4,
        }
    }

    #[inline]
    pub fn next_u32(&mut self) -> u32 {
        if self.pos == 4 {
            self.buf = philox4x32(self.key, [
                self.block as u32,
                (self.block >> 32) as u32,
                0x5eed_0bad,
                0x0df0_adba,
            ]);
            self.block = self.block.wrapping_add(1);
            self.pos = 0;
        }
        let v = self.buf[self.pos];
        self.pos += 1;
        v
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let lo = self.next_u32() as u64;
        let hi = self.next_u32() as u64;
        (hi << 32) | lo
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal via the inverse CDF.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        inverse_normal_cdf(self.uniform())
    }

    /// Exponential with the given rate.
    #[inline]
    pub fn exponential(&mut self, rate: f64) -> f64 {
        debug_assert!(rate > 0.0);
        -self.uniform().ln() / rate
    }

    /// Index sampled proportionally to the (unnormalized) weights.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let u = self.uniform() * total;
        let mut acc = 0.0;
        for (j, w) in weights.iter().enumerate() {
            acc += w;
            if u <= acc {
                return j;
            }
        }
        weights.len() - 1
    }
}

/// Inverse standard normal CDF (Wichura's PPND16), |error| < 1e-15 over (0,1).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r
            + 6.726_577_092_700_87e4)
            * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946_1e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5;
        let den = ((((((5.226_495_278_852_545_5e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return q * num / den;
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_6)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-6)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn philox_reference_vectors() {
        // Random123 known-answer vectors for philox4x32-10.
        assert_eq!(
            philox4x32([0, 0], [0, 0, 0, 0]),
            [0x6627_e8d5, 0xe169_c58d, 0xbc57_ac4c, 0x9b00_dbd8]
        );
        assert_eq!(
            philox4x32(
                [0xffff_ffff, 0xffff_ffff],
                [0xffff_ffff, 0xffff_ffff, 0xffff_ffff, 0xffff_ffff]
            ),
            [0x408f_276d, 0x41c8_3b0e, 0xa20b_c7c6, 0x6d54_51fd]
        );
        assert_eq!(
            philox4x32(
                [0xa409_3822, 0x299f_31d0],
                [0x243f_6a88, 0x85a3_08d3, 0x1319_8a2e, 0x0370_7344]
            ),
            [0xd16c_fe09, 0x94fd_cceb, 0x5001_e420, 0x2412_6ea1]
        );
    }

    #[test]
    fn inverse_cdf_known_quantiles() {
        let cases = [
            (0.5, 0.0),
            (0.975, 1.959_963_984_540_054),
            (0.025, -1.959_963_984_540_054),
            (0.841_344_746_068_543, 1.0),
            (1e-10, -6.361_340_902_404_056),
        ];
        for (p, z) in cases {
            assert!(
                (inverse_normal_cdf(p) - z).abs() < 1e-9,
                "p={p}: got {} want {z}",
                inverse_normal_cdf(p)
            );
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = CounterRng::from_stream(7, domains::PATH_NOISE, 3);
        let mut b = CounterRng::from_stream(7, domains::PATH_NOISE, 3);
        let mut c = CounterRng::from_stream(7, domains::PATH_NOISE, 4);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn uniform_moments() {
        let mut rng = CounterRng::from_seed(11);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let u = rng.uniform();
            assert!(u > 0.0 && u < 1.0);
            sum += u;
            sq += u * u;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!((mean - 0.5).abs() < 0.002);
        assert!((var - 1.0 / 12.0).abs() < 0.002);
    }

    #[test]
    fn normal_moments() {
        let mut rng = CounterRng::from_seed(12);
        let n = 200_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let z = rng.normal();
            sum += z;
            sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
