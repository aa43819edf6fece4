use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Ap,
    Sta,
    ObssNode,
}

/// Node 0 is the AP, nodes `1..=K` the stations, OBSS nodes follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub roles: Vec<Role>,
    pub sense: Vec<Vec<bool>>,
    pub loss: Vec<Vec<f64>>,
}

impl Topology {
    /// One AP and `k` stations that all hear each other.
    pub fn bss(k: usize) -> Self {
        let n = k + 1;
        let mut roles = vec![Role::Sta; n];
        roles[0] = Role::Ap;
        Self { roles, sense: vec![vec![true; n]; n], loss: vec![vec![0.0; n]; n] }
    }

    pub fn n_stations(&self) -> usize {
        self.roles.iter().filter(|r| **r == Role::Sta).count()
    }

    pub fn sta_node(s: usize) -> usize {
        s + 1
    }

    /// Make stations `a` and `b` (zero-based) hidden from each other.
    pub fn hide(mut self, a: usize, b: usize) -> Self {
        let (i, j) = (Self::sta_node(a), Self::sta_node(b));
        self.sense[i][j] = false;
        self.sense[j][i] = false;
        self
    }

    /// Add an OBSS node heard by the listed nodes. Returns its index.
    pub fn add_obss(&mut self, heard_by: &[usize]) -> usize {
        let n = self.roles.len();
        self.roles.push(Role::ObssNode);
        for row in &mut self.sense {
            row.push(false);
        }
        self.sense.push(vec![false; n + 1]);
        self.sense[n][n] = true;
        for &i in heard_by {
            self.sense[i][n] = true;
            self.sense[n][i] = true;
        }
        for row in &mut self.loss {
            row.push(0.0);
        }
        self.loss.push(vec![0.0; n + 1]);
        n
    }

    pub fn set_loss(&mut self, from: usize, to: usize, p: f64) {
        self.loss[from][to] = p;
    }

    pub fn hidden_pair(&self, i: usize, j: usize) -> bool {
        !self.sense[i][j] && self.sense[i][0] && self.sense[j][0]
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.roles.len();
        let bad = |m: String| Err(SimError::Config(m));
        if n == 0 || self.roles[0] != Role::Ap || self.roles.iter().filter(|r| **r == Role::Ap).count() != 1 {
            return bad("node 0 must be the only AP".into());
        }
        if self.sense.len() != n || self.loss.len() != n {
            return bad("matrix dimensions do not match node count".into());
        }
        let mut seen_obss = false;
        for (i, r) in self.roles.iter().enumerate() {
            match r {
                Role::ObssNode => seen_obss = true,
                Role::Sta if seen_obss => return bad("stations must precede OBSS nodes".into()),
                _ => {}
            }
            if self.sense[i].len() != n || self.loss[i].len() != n {
                return bad(format!("row {i} has the wrong length"));
            }
            if !self.sense[i][i] {
                return bad(format!("node {i} must sense itself"));
            }
            for j in 0..n {
                if self.sense[i][j] != self.sense[j][i] {
                    return bad(format!("sense matrix not symmetric at ({i},{j})"));
                }
                if !(0.0..=1.0).contains(&self.loss[i][j]) {
                    return bad(format!("loss ({i},{j}) out of range"));
                }
            }
            if *r == Role::Sta && !self.sense[i][0] {
                return bad(format!("station node {i} does not sense the AP"));
            }
        }
        Ok(())
    }
}
