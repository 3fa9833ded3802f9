use super::LabeledImage;

/// Reflects the image across both axes (a 180 degree rotation).
pub fn transform_flip(img: &LabeledImage) -> LabeledImage {
    let mut pixels = img.pixels.clone();
    pixels.reverse();
    LabeledImage { pixels, ..*img }
}

/// Nearest-neighbour rotation about the image centre, counter-clockwise for
/// positive angles; source pixels outside the image read as 0.
pub fn transform_rotate(img: &LabeledImage, angle_degrees: f32) -> LabeledImage {
    let (rows, cols) = (img.rows, img.cols);
    let theta = (angle_degrees as f64).to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (rows as f64 - 1.0) / 2.0;
    let cx = (cols as f64 - 1.0) / 2.0;
    let mut pixels = vec![0.0f32; rows * cols];
    for r in 0..rows {
        let y = cy - r as f64;
        for c in 0..cols {
            let x = c as f64 - cx;
            // Inverse rotation of the destination coordinate.
            let sx = x * cos + y * sin;
            let sy = -x * sin + y * cos;
            let sc = (sx + cx).round();
            let sr = (cy - sy).round();
            if sr >= 0.0 && sc >= 0.0 && (sr as usize) < rows && (sc as usize) < cols {
                pixels[r * cols + c] = img.pixels[sr as usize * cols + sc as usize];
            }
        }
    }
    LabeledImage { pixels, ..*img }
}

/// Maximum rotation angle for an instance: 0 before `ramp_start`, a linear
/// ramp up to `max_degrees` at `ramp_end`, and `max_degrees` afterwards.
pub fn rotation_schedule(ramp_start: usize, ramp_end: usize, max_degrees: f32, idx: usize) -> f32 {
    if idx < ramp_start {
        0.0
    } else if idx >= ramp_end {
        max_degrees
    } else {
        max_degrees * ((idx - ramp_start) as f64 / (ramp_end - ramp_start) as f64) as f32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_two_by_two() {
        let img = LabeledImage::new(2, 2, vec![1.0, 2.0, 3.0, 4.0], 0);
        assert_eq!(transform_flip(&img).pixels, vec![4.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(rotation_schedule(10, 20, 180.0, 5), 0.0);
        assert_eq!(rotation_schedule(10, 20, 180.0, 10), 0.0);
        assert_eq!(rotation_schedule(10, 20, 180.0, 15), 90.0);
        assert_eq!(rotation_schedule(10, 20, 180.0, 20), 180.0);
        assert_eq!(rotation_schedule(10, 10, 180.0, 10), 180.0);
    }
}
