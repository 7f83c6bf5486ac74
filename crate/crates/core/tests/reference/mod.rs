//! Brute-force scalar reference filters, written directly from the filter
//! definitions without sharing code with the library.

#![allow(dead_code)]

use vron_core::frame::RawFrame;

pub fn px(f: &RawFrame, x: i64, y: i64, c: usize) -> i64 {
    let x = x.clamp(0, f.width as i64 - 1) as usize;
    let y = y.clamp(0, f.height as i64 - 1) as usize;
    f.pixels[(y * f.width as usize + x) * 3 + c] as i64
}

pub fn map_pixels(f: &RawFrame, mut g: impl FnMut(i64, i64, usize) -> i64) -> RawFrame {
    let mut out = f.clone();
    for y in 0..f.height as i64 {
        for x in 0..f.width as i64 {
            for c in 0..3 {
                let v = g(x, y, c);
                assert!((0..=255).contains(&v));
                out.pixels[(y as usize * f.width as usize + x as usize) * 3 + c] = v as u8;
            }
        }
    }
    out
}

pub fn ref_blur(f: &RawFrame, k: i64) -> RawFrame {
    let r = k / 2;
    map_pixels(f, |x, y, c| {
        let mut sum = 0;
        for dy in -r..=r {
            for dx in -r..=r {
                sum += px(f, x + dx, y + dy, c);
            }
        }
        // nearest integer, ties up
        let area = k * k;
        (2 * sum + area) / (2 * area)
    })
}

pub fn ref_sharpen(f: &RawFrame, k: i64) -> RawFrame {
    let b = ref_blur(f, k);
    map_pixels(f, |x, y, c| (2 * px(f, x, y, c) - px(&b, x, y, c)).clamp(0, 255))
}

pub fn ref_brightness(f: &RawFrame, delta_num: i64, delta_den: i64) -> RawFrame {
    // delta is first quantized to 1/65536 (half up), then scaled by 255
    let q = (2 * delta_num * 65536 + delta_den).div_euclid(2 * delta_den);
    let offset = (2 * q * 255 + 65536).div_euclid(2 * 65536);
    map_pixels(f, |x, y, c| (px(f, x, y, c) + offset).clamp(0, 255))
}

pub fn ref_grayscale(f: &RawFrame) -> RawFrame {
    map_pixels(f, |x, y, _| {
        let l = 0.299 * px(f, x, y, 0) as f64 + 0.587 * px(f, x, y, 1) as f64 + 0.114 * px(f, x, y, 2) as f64;
        // exact in thousandths, so adding a half and flooring is exact
        let thousandths = 299 * px(f, x, y, 0) + 587 * px(f, x, y, 1) + 114 * px(f, x, y, 2);
        assert!((l * 1000.0 - thousandths as f64).abs() < 1e-6);
        (thousandths * 2 + 1000) / 2000
    })
}

pub fn ref_denoise(f: &RawFrame) -> RawFrame {
    map_pixels(f, |x, y, c| {
        let mut v = Vec::new();
        for dy in -1..=1 {
            for dx in -1..=1 {
                v.push(px(f, x + dx, y + dy, c));
            }
        }
        v.sort();
        v[4]
    })
}

pub fn ref_white_balance(f: &RawFrame) -> RawFrame {
    let mut sums = [0i64; 3];
    for y in 0..f.height as i64 {
        for x in 0..f.width as i64 {
            for (c, s) in sums.iter_mut().enumerate() {
                *s += px(f, x, y, c);
            }
        }
    }
    let overall = sums.iter().sum::<i64>();
    map_pixels(f, |x, y, c| {
        let v = px(f, x, y, c);
        if sums[c] == 0 {
            return v;
        }
        // gain = mean(all channels) / mean(channel c) = overall / (3 sums[c])
        let num = v * overall;
        let den = 3 * sums[c];
        ((2 * num + den) / (2 * den)).min(255)
    })
}
