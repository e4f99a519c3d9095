use std::collections::VecDeque;

use super::Mask;

/// Keeps the largest 4-connected foreground component. Equal sizes resolve
/// to the component reached first in row-major scan order.
pub fn largest_component(mask: &Mask) -> Mask {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let bits = mask.bits();
    let mut label = vec![0u32; w * h];
    let mut best: Option<(u32, usize)> = None;
    let mut next = 1u32;
    let mut queue = VecDeque::new();

    for start in 0..w * h {
        if !bits[start] || label[start] != 0 {
            continue;
        }
        let id = next;
        next += 1;
        label[start] = id;
        queue.push_back(start);
        let mut size = 0usize;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if bits[j] && label[j] == 0 {
                    label[j] = id;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((id, size));
        }
    }

    match best {
        Some((id, _)) => Mask::from_bits(mask.width(), mask.height(), label.iter().map(|&l| l == id).collect())
            .expect("same dimensions"),
        None => mask.clone(),
    }
}
