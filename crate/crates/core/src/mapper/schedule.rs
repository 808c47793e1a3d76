//! Two-resource list scheduling.
//!
//! A priority list (a topological order of the groups) is simulated by placing
//! each group at the earliest time its target is free and all its inputs are
//! available. For DAGs with at most [`EXACT_ORDER_LIMIT`] topological orders
//! every list is tried (with bound pruning) and the best one kept; larger DAGs
//! use topological order with ties going to the lower group index.

use serde::{Deserialize, Serialize};

/// Compute resource a group runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Target {
    Npu,
    Cpu,
}

impl Target {
    fn slot(self) -> usize {
        match self {
            Target::Npu => 0,
            Target::Cpu => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::Npu => "NPU",
            Target::Cpu => "CPU",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub target: Target,
    pub latency_us: f64,
    pub preds: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slot {
    pub start_us: f64,
    pub end_us: f64,
}

pub const EXACT_ORDER_LIMIT: usize = 40_320;

pub fn makespan(slots: &[Slot]) -> f64 {
    slots.iter().map(|s| s.end_us).fold(0.0, f64::max)
}

fn ready_time(tasks: &[Task], slots: &[Slot], t: usize, transfer_latency_us: f64) -> f64 {
    tasks[t]
        .preds
        .iter()
        .map(|&p| {
            let hop = if tasks[p].target != tasks[t].target { transfer_latency_us } else { 0.0 };
            slots[p].end_us + hop
        })
        .fold(0.0, f64::max)
}

/// Places tasks in `order`, each as early as its resource and inputs allow.
/// `order` must be a topological order.
pub fn simulate_order(tasks: &[Task], order: &[usize], transfer_latency_us: f64) -> Vec<Slot> {
    let mut slots = vec![Slot { start_us: 0.0, end_us: 0.0 }; tasks.len()];
    let mut free = [0.0f64; 2];
    let mut done = vec![false; tasks.len()];
    for &t in order {
        assert!(tasks[t].preds.iter().all(|&p| done[p]), "order is not topological at task {t}");
        let r = tasks[t].target.slot();
        let start = free[r].max(ready_time(tasks, &slots, t, transfer_latency_us));
        slots[t] = Slot {
            start_us: start,
            end_us: start + tasks[t].latency_us,
        };
        free[r] = slots[t].end_us;
        done[t] = true;
    }
    slots
}

fn indegrees(tasks: &[Task]) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut indeg = vec![0; tasks.len()];
    let mut succs = vec![Vec::new(); tasks.len()];
    for (t, task) in tasks.iter().enumerate() {
        for &p in &task.preds {
            indeg[t] += 1;
            succs[p].push(t);
        }
    }
    (indeg, succs)
}

/// Topological order taking the lowest ready index first.
pub fn index_order(tasks: &[Task]) -> Vec<usize> {
    let (mut indeg, succs) = indegrees(tasks);
    let mut ready: std::collections::BTreeSet<usize> = (0..tasks.len()).filter(|&t| indeg[t] == 0).collect();
    let mut order = Vec::with_capacity(tasks.len());
    while let Some(t) = ready.pop_first() {
        order.push(t);
        for &s in &succs[t] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.insert(s);
            }
        }
    }
    assert_eq!(order.len(), tasks.len(), "dependency cycle among groups");
    order
}

/// Number of topological orders, counting stops at `cap`.
pub fn count_orders(tasks: &[Task], cap: usize) -> usize {
    fn go(indeg: &mut [usize], succs: &[Vec<usize>], placed: usize, cap: usize, count: &mut usize) {
        if *count >= cap {
            return;
        }
        if placed == indeg.len() {
            *count += 1;
            return;
        }
        for t in 0..indeg.len() {
            if indeg[t] != 0 {
                continue;
            }
            indeg[t] = usize::MAX;
            for &s in &succs[t] {
                indeg[s] -= 1;
            }
            go(indeg, succs, placed + 1, cap, count);
            for &s in &succs[t] {
                indeg[s] += 1;
            }
            indeg[t] = 0;
        }
    }
    let (mut indeg, succs) = indegrees(tasks);
    let mut count = 0;
    go(&mut indeg, &succs, 0, cap, &mut count);
    count
}

struct Search<'a> {
    tasks: &'a [Task],
    succs: Vec<Vec<usize>>,
    transfer: f64,
    indeg: Vec<usize>,
    slots: Vec<Slot>,
    order: Vec<usize>,
    remaining: [f64; 2],
    best: f64,
    best_order: Vec<usize>,
}

impl Search<'_> {
    fn go(&mut self, free: [f64; 2], span: f64) {
        if self.order.len() == self.tasks.len() {
            if span < self.best {
                self.best = span;
                self.best_order = self.order.clone();
            }
            return;
        }
        let bound = (0..2).map(|r| free[r] + self.remaining[r]).fold(span, f64::max);
        if bound >= self.best {
            return;
        }
        for t in 0..self.tasks.len() {
            if self.indeg[t] != 0 {
                continue;
            }
            let r = self.tasks[t].target.slot();
            let start = free[r].max(ready_time(self.tasks, &self.slots, t, self.transfer));
            let end = start + self.tasks[t].latency_us;
            self.slots[t] = Slot { start_us: start, end_us: end };
            self.indeg[t] = usize::MAX;
            for i in 0..self.succs[t].len() {
                self.indeg[self.succs[t][i]] -= 1;
            }
            self.remaining[r] -= self.tasks[t].latency_us;
            self.order.push(t);
            let mut next = free;
            next[r] = end;
            self.go(next, span.max(end));
            self.order.pop();
            self.remaining[r] += self.tasks[t].latency_us;
            for i in 0..self.succs[t].len() {
                self.indeg[self.succs[t][i]] += 1;
            }
            self.indeg[t] = 0;
        }
    }
}

/// The priority list used for `tasks`.
pub fn priority_order(tasks: &[Task], transfer_latency_us: f64) -> Vec<usize> {
    let fallback = index_order(tasks);
    if count_orders(tasks, EXACT_ORDER_LIMIT + 1) > EXACT_ORDER_LIMIT {
        return fallback;
    }
    let (indeg, succs) = indegrees(tasks);
    let mut remaining = [0.0; 2];
    for t in tasks {
        remaining[t.target.slot()] += t.latency_us;
    }
    let mut search = Search {
        tasks,
        succs,
        transfer: transfer_latency_us,
        indeg,
        slots: vec![Slot { start_us: 0.0, end_us: 0.0 }; tasks.len()],
        order: Vec::new(),
        remaining,
        // Any list beats this; the fallback is a valid list, so the search
        // only replaces it on strict improvement.
        best: makespan(&simulate_order(tasks, &fallback, transfer_latency_us)),
        best_order: fallback,
    };
    search.go([0.0; 2], 0.0);
    search.best_order
}

pub fn schedule(tasks: &[Task], transfer_latency_us: f64) -> Vec<Slot> {
    simulate_order(tasks, &priority_order(tasks, transfer_latency_us), transfer_latency_us)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(target: Target, latency_us: f64, preds: &[usize]) -> Task {
        Task { target, latency_us, preds: preds.to_vec() }
    }

    #[test]
    fn independent_targets_overlap() {
        let tasks = [task(Target::Npu, 4000.0, &[]), task(Target::Cpu, 3000.0, &[])];
        assert_eq!(makespan(&schedule(&tasks, 0.0)), 4000.0);
    }

    #[test]
    fn chain_is_serial() {
        let tasks = [
            task(Target::Npu, 1.0, &[]),
            task(Target::Cpu, 2.0, &[0]),
            task(Target::Npu, 3.0, &[1]),
            task(Target::Cpu, 4.0, &[2]),
        ];
        assert_eq!(makespan(&schedule(&tasks, 0.0)), 10.0);
        assert_eq!(makespan(&schedule(&tasks, 0.5)), 11.5);
    }

    #[test]
    fn diamond() {
        let tasks = [
            task(Target::Npu, 1.0, &[]),
            task(Target::Npu, 2.0, &[0]),
            task(Target::Cpu, 2.0, &[0]),
            task(Target::Npu, 3.0, &[1, 2]),
        ];
        let slots = schedule(&tasks, 0.0);
        assert_eq!(makespan(&slots), 6.0);
        assert_eq!(slots[1].start_us, slots[2].start_us);
    }

    #[test]
    fn resources_never_overlap() {
        let tasks = [
            task(Target::Npu, 5.0, &[]),
            task(Target::Npu, 1.0, &[]),
            task(Target::Cpu, 2.0, &[1]),
            task(Target::Npu, 2.0, &[2]),
        ];
        let slots = schedule(&tasks, 0.0);
        for i in 0..tasks.len() {
            for j in i + 1..tasks.len() {
                if tasks[i].target == tasks[j].target {
                    assert!(slots[i].end_us <= slots[j].start_us || slots[j].end_us <= slots[i].start_us);
                }
            }
        }
        // running the short task first lets the CPU work hide under the long one
        assert_eq!(makespan(&slots), 8.0);
    }

    #[test]
    fn counts_orders() {
        let free: Vec<Task> = (0..4).map(|_| task(Target::Cpu, 1.0, &[])).collect();
        assert_eq!(count_orders(&free, 1000), 24);
        assert_eq!(count_orders(&free, 10), 10);
        let chain = [task(Target::Cpu, 1.0, &[]), task(Target::Cpu, 1.0, &[0])];
        assert_eq!(count_orders(&chain, 1000), 1);
    }
}
