//! Disjoint-set forest with path halving.

#[derive(Debug, Clone)]
pub(crate) struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
        }
    }

    pub(crate) fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    /// Root lookup without path compression.
    pub(crate) fn find_const(&self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            x = self.parent[x as usize];
        }
        x
    }

    /// Attaches the root of `child` under the root of `root`.
    pub(crate) fn attach(&mut self, child: u32, root: u32) {
        let c = self.find(child);
        let r = self.find(root);
        if c != r {
            self.parent[c as usize] = r;
        }
    }

    /// Union by index: the smaller root survives, keeping roots deterministic.
    pub(crate) fn union(&mut self, a: u32, b: u32) -> u32 {
        let ra = self.find(a);
        let rb = self.find(b);
        let (keep, drop) = if ra <= rb { (ra, rb) } else { (rb, ra) };
        self.parent[drop as usize] = keep;
        keep
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn union_and_find() {
        let mut d = DisjointSet::new(5);
        d.union(3, 4);
        d.union(4, 1);
        assert_eq!(d.find(3), 1);
        assert_eq!(d.find_const(4), 1);
        assert_eq!(d.find(0), 0);
        d.attach(0, 4);
        assert_eq!(d.find(0), 1);
    }
}
