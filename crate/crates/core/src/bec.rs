//! Bone Events Check.
//!
//! The window is projected onto a binary occupancy frame, 4-connected
//! domains are labeled, and events whose domain holds at least `tau` pixels
//! are flagged as bone events. Only bone events seed centroid sampling.

use crate::event::{Event, SensorGeometry};

pub const DEFAULT_TAU: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryFrame {
    pub width: usize,
    pub height: usize,
    occupancy: Vec<bool>,
}

impl BinaryFrame {
    pub fn new(width: usize, height: usize) -> Self {
        BinaryFrame {
            width,
            height,
            occupancy: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.occupancy[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.occupancy[y * self.width + x] = on;
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&b| b).count()
    }
}

/// Marks every pixel that holds at least one event; polarity is ignored.
pub fn project_frame(events: &[Event], geometry: &SensorGeometry) -> BinaryFrame {
    let mut frame = BinaryFrame::new(geometry.width as usize, geometry.height as usize);
    for e in events {
        frame.set(e.x as usize, e.y as usize, true);
    }
    frame
}

/// 4-connected component labels. Ids are dense, `1..=n`, assigned in raster
/// order of each component's first pixel; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainLabeling {
    pub width: usize,
    pub height: usize,
    pub label_of: Vec<u32>,
    /// Pixel count per id; index 0 is unused and holds 0.
    pub size_of: Vec<usize>,
}

impl DomainLabeling {
    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.label_of[y * self.width + x]
    }

    pub fn component_count(&self) -> usize {
        self.size_of.len() - 1
    }

    /// Pixel count of the component containing `(x, y)`; 0 for background.
    pub fn domain_size(&self, x: usize, y: usize) -> usize {
        self.size_of[self.label(x, y) as usize]
    }
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        let next = parent[i as usize];
        parent[i as usize] = parent[next as usize];
        i = next;
    }
    i
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let ra = find(parent, a);
    let rb = find(parent, b);
    // keep the smaller provisional label as root
    if ra < rb {
        parent[rb as usize] = ra;
    } else if rb < ra {
        parent[ra as usize] = rb;
    }
}

/// Two-pass union-find labeling with 4-connectivity.
pub fn label_connected_domains(frame: &BinaryFrame) -> DomainLabeling {
    let (w, h) = (frame.width, frame.height);
    let mut provisional = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0];

    for y in 0..h {
        for x in 0..w {
            if !frame.get(x, y) {
                continue;
            }
            let west = if x > 0 { provisional[y * w + x - 1] } else { 0 };
            let north = if y > 0 { provisional[(y - 1) * w + x] } else { 0 };
            let label = match (west, north) {
                (0, 0) => {
                    let l = parent.len() as u32;
                    parent.push(l);
                    l
                }
                (l, 0) | (0, l) => l,
                (a, b) => {
                    union(&mut parent, a, b);
                    a.min(b)
                }
            };
            provisional[y * w + x] = label;
        }
    }

    // resolve roots and renumber densely in raster order of first appearance
    let mut dense = vec![0u32; parent.len()];
    let mut size_of = vec![0usize];
    let mut label_of = vec![0u32; w * h];
    for (i, &p) in provisional.iter().enumerate() {
        if p == 0 {
            continue;
        }
        let root = find(&mut parent, p) as usize;
        if dense[root] == 0 {
            size_of.push(0);
            dense[root] = (size_of.len() - 1) as u32;
        }
        let id = dense[root];
        label_of[i] = id;
        size_of[id as usize] += 1;
    }

    DomainLabeling {
        width: w,
        height: h,
        label_of,
        size_of,
    }
}

/// Flags an event as bone when its pixel's domain has at least `tau` pixels.
/// Several events on one pixel count once towards the domain size.
pub fn mark_bone_events(events: &[Event], labeling: &DomainLabeling, tau: usize) -> Vec<bool> {
    events
        .iter()
        .map(|e| labeling.domain_size(e.x as usize, e.y as usize) >= tau)
        .collect()
}

/// Projection, labeling and marking in one call.
pub fn bone_flags(events: &[Event], geometry: &SensorGeometry, tau: usize) -> Vec<bool> {
    let frame = project_frame(events, geometry);
    let labeling = label_connected_domains(&frame);
    mark_bone_events(events, &labeling, tau)
}
