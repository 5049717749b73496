//! Procedural photo fixtures for the out-of-distribution probe.
//!
//! Three deterministic RGB images standing in for real photographs of an
//! indoor room, a wood texture, and an outdoor scene. They are synthetic
//! stand-ins (no bundled downloads), but carry the relevant structure:
//! bright specular-looking patches, high-frequency texture, and smooth
//! sky-like gradients.

use crate::types::ImageTensor;

pub fn fixture_photos(resolution: usize) -> Vec<(String, ImageTensor)> {
    vec![
        ("indoor_room".to_string(), indoor(resolution)),
        ("wood_texture".to_string(), wood(resolution)),
        ("outdoor_nature".to_string(), outdoor(resolution)),
    ]
}

fn indoor(res: usize) -> ImageTensor {
    ImageTensor::from_fn(res, res, |c, y, x| {
        let fy = y as f32 / res as f32;
        let fx = x as f32 / res as f32;
        // warm wall gradient
        let mut v = match c {
            0 => 0.55 - 0.25 * fy,
            1 => 0.45 - 0.2 * fy,
            _ => 0.35 - 0.15 * fy,
        };
        // dark furniture block
        if (0.15..0.45).contains(&fx) && (0.55..0.9).contains(&fy) {
            v *= 0.35;
        }
        // bright window with a specular-looking hotspot
        if (0.6..0.85).contains(&fx) && (0.1..0.45).contains(&fy) {
            v = 0.92;
            let d = ((fx - 0.72) * (fx - 0.72) + (fy - 0.25) * (fy - 0.25)).sqrt();
            if d < 0.08 {
                v = 1.0;
            }
        }
        v.clamp(0.0, 1.0)
    })
}

fn wood(res: usize) -> ImageTensor {
    ImageTensor::from_fn(res, res, |c, y, x| {
        let fy = y as f32 / res as f32;
        let fx = x as f32 / res as f32;
        let grain = (fx * 40.0 + (fy * 9.0).sin() * 2.2).sin() * 0.5 + 0.5;
        let knots = ((fx * 6.3).sin() * (fy * 5.1).cos()).abs();
        let base = 0.35 + 0.3 * grain + 0.1 * knots;
        match c {
            0 => (base * 1.25).clamp(0.0, 1.0),
            1 => (base * 0.85).clamp(0.0, 1.0),
            _ => (base * 0.55).clamp(0.0, 1.0),
        }
    })
}

fn outdoor(res: usize) -> ImageTensor {
    ImageTensor::from_fn(res, res, |c, y, x| {
        let fy = y as f32 / res as f32;
        let fx = x as f32 / res as f32;
        if fy < 0.55 {
            // sky with a sun disk
            let d = ((fx - 0.78) * (fx - 0.78) + (fy - 0.18) * (fy - 0.18)).sqrt();
            let sun = (1.0 - d / 0.1).max(0.0);
            let sky = match c {
                0 => 0.35 + 0.2 * (1.0 - fy),
                1 => 0.55 + 0.2 * (1.0 - fy),
                _ => 0.85,
            };
            (sky + sun).clamp(0.0, 1.0)
        } else {
            // rolling terrain
            let hills = ((fx * 12.0).sin() * 0.5 + 0.5) * 0.2;
            match c {
                0 => (0.18 + hills * 0.5).clamp(0.0, 1.0),
                1 => (0.42 + hills).clamp(0.0, 1.0),
                _ => (0.15 + hills * 0.3).clamp(0.0, 1.0),
            }
        }
    })
}
