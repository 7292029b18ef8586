use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};

use crate::codegen::LoopNestKernel;

use super::device::{Device, DispatchRecord, WorkerState};
use super::RuntimeError;

/// Runs every work item of one dispatch on the calling thread, z outermost
/// and x innermost.
pub fn dispatch_sync(device: &dyn Device, kernel: &LoopNestKernel, worker: &WorkerState) -> Result<DispatchRecord, RuntimeError> {
    let mut p = device.prepare(kernel, worker)?;
    let cnt = worker.cnt;
    for z in 0..cnt[2] {
        for y in 0..cnt[1] {
            for x in 0..cnt[0] {
                p.run_work_item([x, y, z])?;
            }
        }
    }
    Ok(p.into_record())
}

type Task<'a> = Box<dyn FnOnce() -> Result<(), RuntimeError> + Send + 'a>;

/// Nodes with happens-before edges between them.
#[derive(Default)]
pub struct TaskGraph<'a> {
    tasks: Vec<Mutex<Option<Task<'a>>>>,
    succ: Vec<Vec<usize>>,
    indegree: Vec<usize>,
}

impl<'a> TaskGraph<'a> {
    pub fn new() -> Self {
        Self { tasks: vec![], succ: vec![], indegree: vec![] }
    }

    pub fn add_node(&mut self, task: impl FnOnce() -> Result<(), RuntimeError> + Send + 'a) -> usize {
        self.tasks.push(Mutex::new(Some(Box::new(task))));
        self.succ.push(vec![]);
        self.indegree.push(0);
        self.tasks.len() - 1
    }

    /// `to` runs only after `from` has finished. Duplicate edges are ignored.
    pub fn add_edge(&mut self, from: usize, to: usize) {
        if !self.succ[from].contains(&to) {
            self.succ[from].push(to);
            self.indegree[to] += 1;
        }
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Kahn's algorithm; `None` if the graph has a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let mut indeg = self.indegree.clone();
        let mut ready: VecDeque<usize> = (0..self.len()).filter(|&n| indeg[n] == 0).collect();
        let mut order = Vec::with_capacity(self.len());
        while let Some(n) = ready.pop_front() {
            order.push(n);
            for &s in &self.succ[n] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    ready.push_back(s);
                }
            }
        }
        (order.len() == self.len()).then_some(order)
    }
}

struct State {
    ready: VecDeque<usize>,
    indegree: Vec<usize>,
    finished: usize,
    running: usize,
    error: Option<RuntimeError>,
}

/// Runs each node exactly once, after all of its predecessors, on
/// `workers` threads. The first failure stops new nodes from starting.
pub fn dispatch_async(graph: TaskGraph<'_>, workers: usize) -> Result<(), RuntimeError> {
    if graph.topological_order().is_none() {
        return Err(RuntimeError::CycleDetected);
    }
    let n = graph.len();
    let state = Mutex::new(State {
        ready: (0..n).filter(|&i| graph.indegree[i] == 0).collect(),
        indegree: graph.indegree.clone(),
        finished: 0,
        running: 0,
        error: None,
    });
    let wake = Condvar::new();
    let worker = || loop {
        let node = {
            let mut s = state.lock().expect("scheduler lock");
            loop {
                let stop = s.finished == n || (s.error.is_some() && s.running == 0);
                if stop {
                    wake.notify_all();
                    return;
                }
                if s.error.is_none() {
                    if let Some(node) = s.ready.pop_front() {
                        s.running += 1;
                        break node;
                    }
                }
                s = wake.wait(s).expect("scheduler lock");
            }
        };
        let task = graph.tasks[node].lock().expect("task lock").take().expect("each node runs once");
        let result = task();
        let mut s = state.lock().expect("scheduler lock");
        s.running -= 1;
        match result {
            Ok(()) => {
                s.finished += 1;
                for &succ in &graph.succ[node] {
                    s.indegree[succ] -= 1;
                    if s.indegree[succ] == 0 {
                        s.ready.push_back(succ);
                    }
                }
            }
            Err(e) => {
                s.error.get_or_insert(e);
            }
        }
        wake.notify_all();
    };
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1) {
            scope.spawn(worker);
        }
    });
    match state.into_inner().expect("scheduler lock").error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn diamond_runs_in_dependency_order() {
        for workers in 1..=4 {
            let log = Mutex::new(Vec::new());
            let mut g = TaskGraph::new();
            let ids: Vec<usize> = ["A", "B", "C", "D"]
                .into_iter()
                .map(|name| {
                    let log = &log;
                    g.add_node(move || {
                        log.lock().unwrap().push(name);
                        Ok(())
                    })
                })
                .collect();
            g.add_edge(ids[0], ids[1]);
            g.add_edge(ids[0], ids[2]);
            g.add_edge(ids[1], ids[3]);
            g.add_edge(ids[2], ids[3]);
            dispatch_async(g, workers).unwrap();
            let log = log.into_inner().unwrap();
            assert_eq!(log.len(), 4);
            assert_eq!(log[0], "A");
            assert_eq!(log[3], "D");
        }
    }

    #[test]
    fn cycle_is_rejected_before_running() {
        let ran = AtomicUsize::new(0);
        let mut g = TaskGraph::new();
        let a = g.add_node(|| {
            ran.fetch_add(1, Ordering::SeqCst);
            Ok(())
        });
        let b = g.add_node(|| Ok(()));
        g.add_edge(a, b);
        g.add_edge(b, a);
        assert_eq!(dispatch_async(g, 2), Err(RuntimeError::CycleDetected));
        assert_eq!(ran.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn failure_stops_successors() {
        let ran = AtomicUsize::new(0);
        let mut g = TaskGraph::new();
        let a = g.add_node(|| Err(RuntimeError::KernelTrap("boom".into())));
        let b = g.add_node(|| {
            ran.fetch_add(1, Ordering::SeqCst);
            Ok(())
        });
        g.add_edge(a, b);
        assert!(matches!(dispatch_async(g, 3), Err(RuntimeError::KernelTrap(_))));
        assert_eq!(ran.load(Ordering::SeqCst), 0);
    }
}
