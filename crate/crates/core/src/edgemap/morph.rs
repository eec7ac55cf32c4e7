//! Binary morphology for sketch normalization.

use crate::edgemap::{EdgeMap, Sketch};

/// Thin strokes to a 1-pixel skeleton, then dilate with a 3x3 square.
///
/// Different drawing tools produce strokes of different widths; this makes
/// them all uniformly 3 pixels wide.
pub fn preprocess_sketch(sketch: &Sketch) -> EdgeMap {
    let map = sketch.as_map();
    let (w, h) = (map.width(), map.height());
    let mask: Vec<bool> = map.data().iter().map(|&s| s == 1.0).collect();
    let skeleton = thin_guo_hall(&mask, w, h);
    let dilated = dilate3x3(&skeleton, w, h);
    EdgeMap::from_raw(
        w,
        h,
        dilated
            .iter()
            .map(|&on| if on { 1.0 } else { 0.0 })
            .collect(),
    )
}

/// Guo–Hall two-subiteration parallel thinning. Pixels outside the grid
/// count as background.
///
/// Unlike Zhang–Suen, this leaves the centre line of a 3-pixel-wide straight
/// stroke at full length, so thinning a preprocessed sketch again gives back
/// the same skeleton.
pub fn thin_guo_hall(mask: &[bool], width: usize, height: usize) -> Vec<bool> {
    assert_eq!(mask.len(), width * height);
    let mut img = mask.to_vec();
    let at = |img: &[bool], x: isize, y: isize| -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < width
            && (y as usize) < height
            && img[y as usize * width + x as usize]
    };
    let mut to_clear = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            to_clear.clear();
            for y in 0..height as isize {
                for x in 0..width as isize {
                    if !img[y as usize * width + x as usize] {
                        continue;
                    }
                    // x1..x8 counter-clockwise starting east
                    let n = [
                        at(&img, x + 1, y),
                        at(&img, x + 1, y - 1),
                        at(&img, x, y - 1),
                        at(&img, x - 1, y - 1),
                        at(&img, x - 1, y),
                        at(&img, x - 1, y + 1),
                        at(&img, x, y + 1),
                        at(&img, x + 1, y + 1),
                    ];
                    let crossings = [0, 2, 4, 6]
                        .iter()
                        .filter(|&&i| !n[i] && (n[i + 1] || n[(i + 2) % 8]))
                        .count();
                    if crossings != 1 {
                        continue;
                    }
                    let n1 = [1, 3, 5, 7].iter().filter(|&&k| n[k] || n[k - 1]).count();
                    let n2 = [1, 3, 5, 7]
                        .iter()
                        .filter(|&&k| n[k] || n[(k + 1) % 8])
                        .count();
                    if !(2..=3).contains(&n1.min(n2)) {
                        continue;
                    }
                    let blocked = if pass == 0 {
                        (n[1] || n[2] || !n[7]) && n[0]
                    } else {
                        (n[5] || n[6] || !n[3]) && n[4]
                    };
                    if !blocked {
                        to_clear.push(y as usize * width + x as usize);
                    }
                }
            }
            for &i in &to_clear {
                img[i] = false;
            }
            changed |= !to_clear.is_empty();
        }
        if !changed {
            return img;
        }
    }
}

/// One pass of dilation with a full 3x3 structuring element.
pub fn dilate3x3(mask: &[bool], width: usize, height: usize) -> Vec<bool> {
    assert_eq!(mask.len(), width * height);
    let mut out = vec![false; mask.len()];
    for y in 0..height {
        for x in 0..width {
            if !mask[y * width + x] {
                continue;
            }
            for ny in y.saturating_sub(1)..=(y + 1).min(height - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(width - 1) {
                    out[ny * width + nx] = true;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[&str]) -> (Vec<bool>, usize, usize) {
        let w = rows[0].len();
        let mask = rows
            .iter()
            .flat_map(|r| r.chars().map(|c| c == '#'))
            .collect();
        (mask, w, rows.len())
    }

    fn sketch(rows: &[&str]) -> Sketch {
        let (mask, w, h) = grid(rows);
        let data = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Sketch::new(EdgeMap::new(w, h, data).unwrap()).unwrap()
    }

    fn render(map: &EdgeMap) -> Vec<String> {
        map.data()
            .chunks(map.width())
            .map(|r| {
                r.iter()
                    .map(|&s| if s == 1.0 { '#' } else { '.' })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn empty_sketch_is_a_fixed_point() {
        let s = sketch(&[".....", ".....", "....."]);
        assert_eq!(preprocess_sketch(&s), s.as_map().clone());
    }

    #[test]
    fn one_pixel_line_is_widened_to_three() {
        let s = sketch(&[
            "..........",
            "..........",
            "..######..",
            "..........",
            "..........",
        ]);
        assert_eq!(
            render(&preprocess_sketch(&s)),
            vec![
                "..........",
                ".########.",
                ".########.",
                ".########.",
                "..........",
            ]
        );
    }

    // Expected skeletons below were cross-checked against scikit-image's
    // `morphology.thin`, an independent implementation of the same algorithm.
    #[test]
    fn filled_square_thins_to_centre_then_dilates() {
        let (mask, w, h) = grid(&[
            ".......", ".#####.", ".#####.", ".#####.", ".#####.", ".#####.", ".......",
        ]);
        let skeleton = thin_guo_hall(&mask, w, h);
        let on: Vec<usize> = (0..skeleton.len()).filter(|&i| skeleton[i]).collect();
        assert_eq!(on, vec![3 * 7 + 3]);

        let s = sketch(&[
            ".......", ".#####.", ".#####.", ".#####.", ".#####.", ".#####.", ".......",
        ]);
        assert_eq!(
            render(&preprocess_sketch(&s)),
            vec![".......", ".......", "..###..", "..###..", "..###..", ".......", ".......",]
        );
    }

    #[test]
    fn irregular_blob_matches_reference_skeleton() {
        let (mask, w, h) = grid(&[
            "..............",
            "..............",
            "..#####.......",
            "..#####...#...",
            "..#####.......",
            "..##########..",
            "..##########..",
            "..##########..",
            "..#####.......",
            ".........####.",
            ".........####.",
            "..............",
        ]);
        let (expected, _, _) = grid(&[
            "..............",
            "..............",
            "..............",
            "..........#...",
            "....#.........",
            "....#.........",
            ".....######...",
            "..............",
            "..............",
            "..............",
            ".........###..",
            "..............",
        ]);
        assert_eq!(thin_guo_hall(&mask, w, h), expected);
    }

    #[test]
    fn thinning_keeps_one_pixel_lines() {
        let (mask, w, h) = grid(&["......", ".####.", "......"]);
        assert_eq!(thin_guo_hall(&mask, w, h), mask);
        let (mask, w, h) = grid(&["...", ".#.", ".#.", ".#.", "..."]);
        assert_eq!(thin_guo_hall(&mask, w, h), mask);
    }

    #[test]
    fn second_application_matches_first_on_straight_lines() {
        for rows in [
            &[
                "............",
                "............",
                "............",
                "...######...",
                "............",
                "............",
                "............",
            ][..],
            &[
                ".......", ".......", "...#...", "...#...", "...#...", "...#...", ".......",
                ".......",
            ][..],
        ] {
            let once = preprocess_sketch(&sketch(rows));
            let twice = preprocess_sketch(&Sketch::new(once.clone()).unwrap());
            assert_eq!(render(&twice), render(&once));
        }
    }

    #[test]
    fn dilation_clips_at_borders() {
        let (mask, w, h) = grid(&["#..", "...", "..."]);
        let out = dilate3x3(&mask, w, h);
        let on: Vec<usize> = (0..9).filter(|&i| out[i]).collect();
        assert_eq!(on, vec![0, 1, 3, 4]);
    }
}
