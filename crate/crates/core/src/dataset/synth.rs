//! Templated synthetic contracts. Each template is a small program in an
//! internal IR that is rendered three ways: Solidity text, a compact AST
//! whose `src` offsets index that text, and a solc-shaped opcode listing.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::evm::asm::assemble;
use crate::patterns::Vulnerability;

// referencedDeclaration ids that solc 0.8 gives to magic globals
const MSG: i64 = 4294967281;
const BLOCK: i64 = 4294967292;
const REQUIRE: i64 = 4294967278;
const THIS: i64 = 4294967268;

#[derive(Debug, Clone)]
enum Expr {
    Lit(u64),
    True,
    Param(usize),
    Local(&'static str),
    State(usize),
    /// `balances[msg.sender]`
    Balance,
    Sender,
    Value,
    Timestamp,
    Bin(&'static str, Box<Expr>, Box<Expr>),
}

fn bin(op: &'static str, a: Expr, b: Expr) -> Expr {
    Expr::Bin(op, Box::new(a), Box::new(b))
}

#[derive(Debug, Clone)]
enum Stmt {
    Require(Expr),
    /// `msg.sender.call{value: e}("")`
    Send(Expr),
    SetBalance(&'static str, Expr),
    SetState(usize, &'static str, Expr),
    Local(&'static str, Expr),
    SetLocal(&'static str, &'static str, Expr),
    If(Expr, Vec<Stmt>),
    While(Expr, Vec<Stmt>),
    /// Counter name, exclusive bound, whether the step increments, body.
    For(&'static str, Expr, bool, Vec<Stmt>),
    /// `this.f(args)` on function index `f`.
    SelfCall(usize, Vec<Expr>),
    Return(Expr),
}

#[derive(Debug, Clone)]
struct Func {
    name: &'static str,
    params: Vec<&'static str>,
    returns: bool,
    body: Vec<Stmt>,
}

#[derive(Debug, Clone)]
struct Program {
    name: String,
    /// Slot 0 is always the `balances` mapping; these follow from slot 1.
    state: Vec<&'static str>,
    funcs: Vec<Func>,
}

/// One generated contract in all three renderings.
#[derive(Debug, Clone)]
pub struct SynthContract {
    pub contract_id: String,
    pub vulnerability: Vulnerability,
    pub vulnerable: bool,
    /// Template variant name, e.g. `call-before-update`.
    pub template: &'static str,
    pub solidity: String,
    pub ast_json: String,
    pub bytecode_hex: String,
}

const STATE_VARS: [&str; 8] =
    ["total", "counter", "limit", "pot", "round", "lastSeen", "deadline", "fee"];

fn slot(p: &Program, name: &str) -> usize {
    1 + p.state.iter().position(|s| *s == name).expect("declared state variable")
}

// ---------------------------------------------------------------------------
// templates

fn decoy_functions(rng: &mut ChaCha8Rng, p: &Program) -> Vec<Func> {
    let k = rng.gen_range(2..9u64);
    let total = slot(p, "total");
    let counter = slot(p, "counter");
    let limit = slot(p, "limit");
    let mut pool = vec![
        Func {
            name: "deposit",
            params: vec![],
            returns: false,
            body: vec![Stmt::SetBalance("+=", Expr::Value)],
        },
        Func {
            name: "balanceOf",
            params: vec![],
            returns: true,
            body: vec![Stmt::Return(Expr::Balance)],
        },
        Func {
            name: "bump",
            params: vec!["x"],
            returns: false,
            body: vec![Stmt::SetState(counter, "+=", bin("*", Expr::Param(0), Expr::Lit(k)))],
        },
        Func {
            name: "setLimit",
            params: vec!["x"],
            returns: false,
            body: vec![
                Stmt::Require(bin(">", Expr::Param(0), Expr::Lit(k))),
                Stmt::SetState(limit, "=", Expr::Param(0)),
            ],
        },
        Func {
            name: "mix",
            params: vec!["a", "b"],
            returns: false,
            body: vec![
                Stmt::Local("t", bin("+", bin("*", Expr::Param(0), Expr::Lit(k)), Expr::Param(1))),
                Stmt::SetState(total, "=", bin("%", Expr::Local("t"), Expr::Lit(k + 3))),
            ],
        },
        Func {
            name: "getTotal",
            params: vec![],
            returns: true,
            body: vec![Stmt::Return(Expr::State(total))],
        },
    ];
    pool.shuffle(rng);
    pool.truncate(rng.gen_range(1..4));
    pool
}

/// Arithmetic-only statements that may precede a key function body.
fn prelude(rng: &mut ChaCha8Rng, has_param: bool) -> Vec<Stmt> {
    let names = ["a0", "a1"];
    (0..rng.gen_range(0..3))
        .map(|i| {
            let base = if has_param { Expr::Param(0) } else { Expr::Lit(rng.gen_range(1..50)) };
            let op = ["+", "*", "-"][rng.gen_range(0..3)];
            Stmt::Local(names[i], bin(op, base, Expr::Lit(rng.gen_range(1..20))))
        })
        .collect()
}

/// `(bool ok, ) = msg.sender.call{value: e}(""); require(ok);`
fn send(e: Expr) -> [Stmt; 2] {
    [Stmt::Send(e), Stmt::Require(Expr::Local("ok"))]
}

fn reentrancy(rng: &mut ChaCha8Rng, p: &Program, vulnerable: bool) -> (&'static str, Func) {
    let amt = || Expr::Param(0);
    let enough = || Stmt::Require(bin(">=", Expr::Balance, Expr::Param(0)));
    let total = slot(p, "total");
    let (name, mut body) = if vulnerable {
        match rng.gen_range(0..3) {
            0 => (
                "call-before-update",
                [vec![enough()], send(amt()).to_vec(), vec![Stmt::SetBalance("-=", amt())]].concat(),
            ),
            1 => ("unchecked-call-before-update", [send(amt()).to_vec(), vec![Stmt::SetBalance("-=", amt())]].concat()),
            _ => (
                "drain-then-zero",
                [send(Expr::Balance).to_vec(), vec![Stmt::SetBalance("=", Expr::Lit(0))]].concat(),
            ),
        }
    } else {
        match rng.gen_range(0..3) {
            0 => (
                "checks-effects-interactions",
                [vec![enough(), Stmt::SetBalance("-=", amt())], send(amt()).to_vec()].concat(),
            ),
            1 => (
                "zero-then-send",
                [
                    vec![Stmt::Local("owed", Expr::Balance), Stmt::SetBalance("=", Expr::Lit(0))],
                    send(Expr::Local("owed")).to_vec(),
                ]
                .concat(),
            ),
            _ => (
                "internal-ledger",
                vec![
                    enough(),
                    Stmt::SetBalance("-=", amt()),
                    Stmt::SetState(total, "+=", amt()),
                ],
            ),
        }
    };
    let mut pre = prelude(rng, true);
    pre.append(&mut body);
    (name, Func { name: "withdraw", params: vec!["amount"], returns: false, body: pre })
}

fn timestamp(rng: &mut ChaCha8Rng, p: &Program, vulnerable: bool) -> (&'static str, Func) {
    let k = rng.gen_range(2..10u64);
    let pot = slot(p, "pot");
    let last = slot(p, "lastSeen");
    let counter = slot(p, "counter");
    let round = slot(p, "round");
    let deadline = slot(p, "deadline");
    let limit = slot(p, "limit");
    let (name, body) = if vulnerable {
        match rng.gen_range(0..3) {
            0 => (
                "timestamp-lottery",
                vec![
                    Stmt::Local("t", Expr::Timestamp),
                    Stmt::If(
                        bin("==", bin("%", Expr::Local("t"), Expr::Lit(k)), Expr::Lit(0)),
                        vec![Stmt::SetBalance("+=", Expr::State(pot))],
                    ),
                ],
            ),
            1 => (
                "timestamp-deadline",
                vec![
                    Stmt::Require(bin(">=", Expr::Timestamp, Expr::State(deadline))),
                    Stmt::SetState(pot, "+=", Expr::Value),
                ],
            ),
            _ => (
                "stored-timestamp-branch",
                vec![
                    Stmt::SetState(last, "=", Expr::Timestamp),
                    Stmt::If(
                        bin("==", bin("%", Expr::State(last), Expr::Lit(k)), Expr::Lit(1)),
                        vec![Stmt::SetState(counter, "+=", Expr::Lit(1))],
                    ),
                ],
            ),
        }
    } else {
        match rng.gen_range(0..3) {
            0 => (
                "round-counter",
                vec![
                    Stmt::SetState(round, "+=", Expr::Lit(1)),
                    Stmt::If(
                        bin("==", bin("%", Expr::State(round), Expr::Lit(k)), Expr::Lit(0)),
                        vec![Stmt::SetBalance("+=", Expr::State(pot))],
                    ),
                ],
            ),
            1 => (
                "timestamp-log-only",
                vec![
                    Stmt::SetState(counter, "+=", Expr::Lit(1)),
                    Stmt::SetState(last, "=", Expr::Timestamp),
                ],
            ),
            _ => (
                "value-threshold",
                vec![
                    Stmt::Require(bin(">=", Expr::Value, Expr::State(limit))),
                    Stmt::SetState(pot, "+=", Expr::Value),
                ],
            ),
        }
    };
    let mut pre = prelude(rng, false);
    pre.extend(body);
    (name, Func { name: "play", params: vec![], returns: false, body: pre })
}

fn infinite_loop(rng: &mut ChaCha8Rng, p: &Program, vulnerable: bool, self_index: usize) -> (&'static str, Func) {
    let counter = slot(p, "counter");
    let limit = slot(p, "limit");
    let total = slot(p, "total");
    let n = || Expr::Param(0);
    let (name, body) = if vulnerable {
        match rng.gen_range(0..3) {
            0 => (
                "while-true",
                vec![Stmt::While(Expr::True, vec![Stmt::SetState(counter, "+=", Expr::Lit(1))])],
            ),
            1 => (
                "missing-increment",
                vec![
                    Stmt::Local("s", Expr::Lit(0)),
                    Stmt::For("i", n(), false, vec![Stmt::SetLocal("s", "+=", Expr::Local("i"))]),
                    Stmt::SetState(total, "=", Expr::Local("s")),
                ],
            ),
            _ => ("unguarded-self-call", vec![Stmt::SelfCall(self_index, vec![n()])]),
        }
    } else {
        match rng.gen_range(0..3) {
            0 => (
                "bounded-for",
                vec![
                    Stmt::Local("s", Expr::Lit(0)),
                    Stmt::For("i", n(), true, vec![Stmt::SetLocal("s", "+=", Expr::Local("i"))]),
                    Stmt::SetState(total, "=", Expr::Local("s")),
                ],
            ),
            1 => (
                "storage-bounded-while",
                vec![Stmt::While(
                    bin("<", Expr::State(counter), Expr::State(limit)),
                    vec![Stmt::SetState(counter, "+=", Expr::Lit(1))],
                )],
            ),
            _ => (
                "guarded-self-call",
                vec![Stmt::If(
                    bin(">", n(), Expr::Lit(0)),
                    vec![Stmt::SelfCall(self_index, vec![bin("-", n(), Expr::Lit(1))])],
                )],
            ),
        }
    };
    let mut pre = prelude(rng, true);
    pre.extend(body);
    (name, Func { name: "run", params: vec!["n"], returns: false, body: pre })
}

fn build_program(
    rng: &mut ChaCha8Rng,
    name: String,
    vuln: Vulnerability,
    vulnerable: bool,
) -> (&'static str, Program) {
    let mut state = STATE_VARS.to_vec();
    state.shuffle(rng);
    let mut p = Program { name, state, funcs: Vec::new() };
    let mut funcs = decoy_functions(rng, &p);
    let key_at = rng.gen_range(0..=funcs.len());
    let (template, key) = match vuln {
        Vulnerability::Reentrancy => reentrancy(rng, &p, vulnerable),
        Vulnerability::Timestamp => timestamp(rng, &p, vulnerable),
        Vulnerability::InfiniteLoop => infinite_loop(rng, &p, vulnerable, key_at),
    };
    funcs.insert(key_at, key);
    p.funcs = funcs;
    (template, p)
}

// ---------------------------------------------------------------------------
// Solidity text + compact AST

struct AstWriter<'p> {
    p: &'p Program,
    text: String,
    next_id: i64,
    state_ids: Vec<i64>,
    func_ids: Vec<i64>,
    params: Vec<i64>,
    current_params: Vec<&'static str>,
    locals: Vec<(&'static str, i64)>,
}

fn with(mut base: Value, extra: Value) -> Value {
    if let (Some(b), Value::Object(e)) = (base.as_object_mut(), extra) {
        b.extend(e);
    }
    base
}

fn type_desc(s: &str) -> Value {
    json!({ "typeString": s, "typeIdentifier": s.replace(' ', "_") })
}

impl<'p> AstWriter<'p> {
    fn id(&mut self) -> i64 {
        self.next_id += 1;
        self.next_id
    }

    fn pos(&self) -> usize {
        self.text.len()
    }

    fn put(&mut self, s: &str) {
        self.text.push_str(s);
    }

    fn node(&mut self, ty: &str, start: usize, extra: Value) -> Value {
        let id = self.id();
        let src = format!("{start}:{}:0", self.pos() - start);
        with(json!({ "id": id, "nodeType": ty, "src": src }), extra)
    }

    fn ident(&mut self, name: &str, decl: i64, ty: &str) -> Value {
        let start = self.pos();
        self.put(name);
        self.node(
            "Identifier",
            start,
            json!({ "name": name, "referencedDeclaration": decl, "typeDescriptions": type_desc(ty) }),
        )
    }

    fn member(&mut self, start: usize, base: Value, member: &str, ty: &str, decl: Option<i64>) -> Value {
        self.put(".");
        self.put(member);
        let mut extra = json!({ "expression": base, "memberName": member, "typeDescriptions": type_desc(ty) });
        if let Some(d) = decl {
            extra["referencedDeclaration"] = json!(d);
        }
        self.node("MemberAccess", start, extra)
    }

    fn expr(&mut self, e: &Expr) -> Value {
        let start = self.pos();
        match e {
            Expr::Lit(n) => {
                self.put(&n.to_string());
                self.node(
                    "Literal",
                    start,
                    json!({ "kind": "number", "value": n.to_string(), "typeDescriptions": type_desc(&format!("int_const {n}")) }),
                )
            }
            Expr::True => {
                self.put("true");
                self.node("Literal", start, json!({ "kind": "bool", "value": "true", "typeDescriptions": type_desc("bool") }))
            }
            Expr::Param(i) => {
                let name = self.current_params[*i];
                let decl = self.params[*i];
                self.ident(name, decl, "uint256")
            }
            Expr::Local(name) => {
                let decl = self.local(name);
                self.ident(name, decl, "uint256")
            }
            Expr::State(slot) => {
                let name = self.p.state[slot - 1];
                let decl = self.state_ids[*slot];
                self.ident(name, decl, "uint256")
            }
            Expr::Balance => {
                let decl = self.state_ids[0];
                let base = self.ident("balances", decl, "mapping(address => uint256)");
                self.put("[");
                let idx = self.expr(&Expr::Sender);
                self.put("]");
                self.node(
                    "IndexAccess",
                    start,
                    json!({ "baseExpression": base, "indexExpression": idx, "typeDescriptions": type_desc("uint256") }),
                )
            }
            Expr::Sender | Expr::Value => {
                let base = self.ident("msg", MSG, "msg");
                let (m, ty) = if matches!(e, Expr::Sender) { ("sender", "address") } else { ("value", "uint256") };
                self.member(start, base, m, ty, None)
            }
            Expr::Timestamp => {
                let base = self.ident("block", BLOCK, "block");
                self.member(start, base, "timestamp", "uint256", None)
            }
            Expr::Bin(op, a, b) => {
                let nested = |x: &Expr| matches!(x, Expr::Bin(..));
                let l = self.paren(a, nested(a));
                self.put(&format!(" {op} "));
                let r = self.paren(b, nested(b));
                let ty = if matches!(*op, "<" | ">" | "<=" | ">=" | "==" | "!=") { "bool" } else { "uint256" };
                self.node(
                    "BinaryOperation",
                    start,
                    json!({ "operator": op, "leftExpression": l, "rightExpression": r, "typeDescriptions": type_desc(ty) }),
                )
            }
        }
    }

    fn paren(&mut self, e: &Expr, wrap: bool) -> Value {
        if !wrap {
            return self.expr(e);
        }
        let start = self.pos();
        self.put("(");
        let inner = self.expr(e);
        self.put(")");
        self.node("TupleExpression", start, json!({ "components": [inner], "isInlineArray": false }))
    }

    fn local(&self, name: &str) -> i64 {
        self.locals.iter().rev().find(|(n, _)| *n == name).map(|l| l.1).expect("declared local")
    }

    fn indent(&mut self, depth: usize) {
        self.put(&"    ".repeat(depth));
    }

    fn block(&mut self, stmts: &[Stmt], depth: usize) -> Value {
        let start = self.pos();
        self.put("{\n");
        let scope = self.locals.len();
        let statements: Vec<Value> = stmts
            .iter()
            .map(|s| {
                self.indent(depth + 1);
                let v = self.stmt(s, depth + 1);
                self.put("\n");
                v
            })
            .collect();
        self.locals.truncate(scope);
        self.indent(depth);
        self.put("}");
        self.node("Block", start, json!({ "statements": statements }))
    }

    fn expr_stmt(&mut self, start: usize, expression: Value) -> Value {
        self.put(";");
        self.node("ExpressionStatement", start, json!({ "expression": expression }))
    }

    fn declare(&mut self, name: &'static str, init: Option<&Expr>) -> Value {
        let start = self.pos();
        let dstart = self.pos();
        self.put(&format!("uint256 {name}"));
        let decl = self.node(
            "VariableDeclaration",
            dstart,
            json!({ "name": name, "stateVariable": false, "storageLocation": "default", "typeDescriptions": type_desc("uint256") }),
        );
        let did = decl["id"].as_i64().unwrap();
        let init = init.map(|e| {
            self.put(" = ");
            self.expr(e)
        });
        self.locals.push((name, did));
        self.put(";");
        self.node(
            "VariableDeclarationStatement",
            start,
            json!({ "assignments": [did], "declarations": [decl], "initialValue": init }),
        )
    }

    fn assignment(&mut self, start: usize, lhs: Value, op: &str, rhs: &Expr) -> Value {
        self.put(&format!(" {op} "));
        let r = self.expr(rhs);
        let a = self.node(
            "Assignment",
            start,
            json!({ "operator": op, "leftHandSide": lhs, "rightHandSide": r, "typeDescriptions": type_desc("uint256") }),
        );
        self.expr_stmt(start, a)
    }

    fn stmt(&mut self, s: &Stmt, depth: usize) -> Value {
        let start = self.pos();
        match s {
            Stmt::Require(c) => {
                let callee = self.ident("require", REQUIRE, "function (bool) pure");
                self.put("(");
                let arg = self.expr(c);
                self.put(")");
                let call = self.node(
                    "FunctionCall",
                    start,
                    json!({ "expression": callee, "arguments": [arg], "kind": "functionCall", "names": [], "typeDescriptions": type_desc("tuple()") }),
                );
                self.expr_stmt(start, call)
            }
            Stmt::Send(amount) => {
                self.put("(");
                let dstart = self.pos();
                self.put("bool ok");
                let decl = self.node(
                    "VariableDeclaration",
                    dstart,
                    json!({ "name": "ok", "stateVariable": false, "storageLocation": "default", "typeDescriptions": type_desc("bool") }),
                );
                let did = decl["id"].as_i64().unwrap();
                self.put(", ) = ");
                let cstart = self.pos();
                let sender = self.expr(&Expr::Sender);
                let callee = self.member(
                    cstart,
                    sender,
                    "call",
                    "function (bytes memory) payable returns (bool,bytes memory)",
                    None,
                );
                self.put("{value: ");
                let v = self.expr(amount);
                self.put("}");
                let opts = self.node(
                    "FunctionCallOptions",
                    cstart,
                    json!({ "expression": callee, "names": ["value"], "options": [v] }),
                );
                self.put("(");
                let lit_start = self.pos();
                self.put("\"\"");
                let empty = self.node("Literal", lit_start, json!({ "kind": "string", "value": "", "typeDescriptions": type_desc("literal_string \"\"") }));
                self.put(")");
                let call = self.node(
                    "FunctionCall",
                    cstart,
                    json!({ "expression": opts, "arguments": [empty], "kind": "functionCall", "names": [], "typeDescriptions": type_desc("tuple(bool,bytes memory)") }),
                );
                self.locals.push(("ok", did));
                self.put(";");
                self.node(
                    "VariableDeclarationStatement",
                    start,
                    json!({ "assignments": [did, null], "declarations": [decl, null], "initialValue": call }),
                )
            }
            Stmt::SetBalance(op, rhs) => {
                let lhs = self.expr(&Expr::Balance);
                self.assignment(start, lhs, op, rhs)
            }
            Stmt::SetState(slot, op, rhs) => {
                let lhs = self.expr(&Expr::State(*slot));
                self.assignment(start, lhs, op, rhs)
            }
            Stmt::Local(name, init) => self.declare(name, Some(init)),
            Stmt::SetLocal(name, op, rhs) => {
                let lhs = self.expr(&Expr::Local(name));
                self.assignment(start, lhs, op, rhs)
            }
            Stmt::If(c, body) => {
                self.put("if (");
                let cond = self.expr(c);
                self.put(") ");
                let b = self.block(body, depth);
                self.node("IfStatement", start, json!({ "condition": cond, "trueBody": b, "falseBody": null }))
            }
            Stmt::While(c, body) => {
                self.put("while (");
                let cond = self.expr(c);
                self.put(") ");
                let b = self.block(body, depth);
                self.node("WhileStatement", start, json!({ "condition": cond, "body": b }))
            }
            Stmt::For(var, bound, inc, body) => {
                self.put("for (");
                let scope = self.locals.len();
                let init = self.declare(var, Some(&Expr::Lit(0)));
                self.put(" ");
                let cond = self.expr(&bin("<", Expr::Local(var), bound.clone()));
                self.put(";");
                let step = if *inc {
                    self.put(" ");
                    let sstart = self.pos();
                    let sub = self.expr(&Expr::Local(var));
                    self.put("++");
                    let u = self.node(
                        "UnaryOperation",
                        sstart,
                        json!({ "operator": "++", "prefix": false, "subExpression": sub, "typeDescriptions": type_desc("uint256") }),
                    );
                    let id = self.id();
                    json!({ "id": id, "nodeType": "ExpressionStatement", "src": u["src"].clone(), "expression": u })
                } else {
                    Value::Null
                };
                self.put(") ");
                let b = self.block(body, depth);
                self.locals.truncate(scope);
                self.node(
                    "ForStatement",
                    start,
                    json!({ "initializationExpression": init, "condition": cond, "loopExpression": step, "body": b }),
                )
            }
            Stmt::SelfCall(f, args) => {
                let this = self.ident("this", THIS, "contract");
                let name = self.p.funcs[*f].name;
                let fid = self.func_ids[*f];
                let callee = self.member(start, this, name, "function (uint256) external", Some(fid));
                self.put("(");
                let mut argv = Vec::new();
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        self.put(", ");
                    }
                    argv.push(self.expr(a));
                }
                self.put(")");
                let call = self.node(
                    "FunctionCall",
                    start,
                    json!({ "expression": callee, "arguments": argv, "kind": "functionCall", "names": [], "typeDescriptions": type_desc("tuple()") }),
                );
                self.expr_stmt(start, call)
            }
            Stmt::Return(e) => {
                self.put("return ");
                let v = self.expr(e);
                self.put(";");
                self.node("Return", start, json!({ "expression": v }))
            }
        }
    }

    fn params_list(&mut self, names: &[&'static str]) -> (Value, Vec<i64>) {
        let start = self.pos();
        self.put("(");
        let mut decls = Vec::new();
        let mut ids = Vec::new();
        for (i, n) in names.iter().enumerate() {
            if i > 0 {
                self.put(", ");
            }
            let s = self.pos();
            self.put(&format!("uint256 {n}"));
            let d = self.node(
                "VariableDeclaration",
                s,
                json!({ "name": n, "stateVariable": false, "storageLocation": "default", "typeDescriptions": type_desc("uint256") }),
            );
            ids.push(d["id"].as_i64().unwrap());
            decls.push(d);
        }
        self.put(")");
        (self.node("ParameterList", start, json!({ "parameters": decls })), ids)
    }
}

fn render_ast(p: &Program, path: &str) -> (String, String) {
    let mut w = AstWriter {
        p,
        text: String::new(),
        next_id: 0,
        state_ids: Vec::new(),
        func_ids: Vec::new(),
        params: Vec::new(),
        locals: Vec::new(),
        current_params: Vec::new(),
    };
    w.put("// SPDX-License-Identifier: MIT\n");
    let pstart = w.pos();
    w.put("pragma solidity ^0.8.0;");
    let pragma = w.node("PragmaDirective", pstart, json!({ "literals": ["solidity", "^", "0.8", ".0"] }));
    w.put("\n\n");
    let cstart = w.pos();
    w.put(&format!("contract {} {{\n", p.name));
    // ids for functions are reserved up front so self calls can reference them
    let func_ids: Vec<i64> = p.funcs.iter().map(|_| w.id()).collect();
    w.func_ids = func_ids.clone();
    let mut members = Vec::new();
    let mut state_ids = Vec::new();
    for (name, ty) in std::iter::once(("balances", "mapping(address => uint256)"))
        .chain(p.state.iter().map(|s| (*s, "uint256")))
    {
        w.put("    ");
        let s = w.pos();
        w.put(&format!("{ty} public {name};"));
        let d = w.node(
            "VariableDeclaration",
            s,
            json!({ "name": name, "stateVariable": true, "visibility": "public", "storageLocation": "default", "typeDescriptions": type_desc(ty) }),
        );
        state_ids.push(d["id"].as_i64().unwrap());
        members.push(d);
        w.put("\n");
    }
    w.state_ids = state_ids;
    for (fi, f) in p.funcs.iter().enumerate() {
        w.put("\n    ");
        let fstart = w.pos();
        w.put(&format!("function {}", f.name));
        let (params, ids) = w.params_list(&f.params);
        w.params = ids;
        w.current_params = f.params.clone();
        w.put(" public payable");
        let rstart = w.pos();
        let returns = if f.returns {
            w.put(" returns (uint256)");
            json!([{ "name": "", "nodeType": "VariableDeclaration", "stateVariable": false, "typeDescriptions": type_desc("uint256") }])
        } else {
            json!([])
        };
        let mut rp = w.node("ParameterList", rstart, json!({}));
        if let Some(arr) = returns.as_array() {
            let ps: Vec<Value> = arr
                .iter()
                .map(|x| {
                    let id = w.id();
                    with(x.clone(), json!({ "id": id, "src": rp["src"].clone() }))
                })
                .collect();
            rp["parameters"] = json!(ps);
        }
        w.put(" ");
        w.locals.clear();
        let body = w.block(&f.body, 1);
        let src = format!("{fstart}:{}:0", w.pos() - fstart);
        members.push(json!({
            "id": func_ids[fi],
            "nodeType": "FunctionDefinition",
            "src": src,
            "name": f.name,
            "kind": "function",
            "implemented": true,
            "visibility": "public",
            "stateMutability": "payable",
            "modifiers": [],
            "parameters": params,
            "returnParameters": rp,
            "body": body,
        }));
        w.put("\n");
    }
    w.put("}\n");
    let contract = w.node(
        "ContractDefinition",
        cstart,
        json!({ "name": p.name, "contractKind": "contract", "abstract": false, "nodes": members }),
    );
    let root = json!({
        "id": w.id(),
        "nodeType": "SourceUnit",
        "absolutePath": path,
        "src": format!("0:{}:0", w.text.len()),
        "nodes": [pragma, contract],
    });
    (w.text, serde_json::to_string_pretty(&root).expect("AST serializes"))
}

// ---------------------------------------------------------------------------
// opcode listing

struct AsmWriter<'p> {
    p: &'p Program,
    out: Vec<String>,
    labels: usize,
    locals: Vec<&'static str>,
    selectors: &'p [u32],
}

const LOCALS_BASE: usize = 0x80;

impl AsmWriter<'_> {
    fn emit(&mut self, s: impl Into<String>) {
        self.out.push(s.into());
    }

    fn label(&mut self, hint: &str) -> String {
        self.labels += 1;
        format!("{hint}_{}", self.labels)
    }

    fn place(&mut self, label: &str) {
        self.emit(format!("{label}: JUMPDEST"));
    }

    fn push(&mut self, v: u64) {
        if v <= 0xff {
            self.emit(format!("PUSH1 0x{v:02x}"));
        } else {
            self.emit(format!("PUSH8 0x{v:016x}"));
        }
    }

    fn local_addr(&mut self, name: &'static str) -> u64 {
        let idx = match self.locals.iter().position(|l| *l == name) {
            Some(i) => i,
            None => {
                self.locals.push(name);
                self.locals.len() - 1
            }
        };
        (LOCALS_BASE + 0x20 * idx) as u64 + 0x100
    }

    /// Leaves the storage key of `balances[msg.sender]` on the stack.
    fn balance_key(&mut self) {
        self.emit("CALLER PUSH1 0x00 MSTORE PUSH1 0x00 PUSH1 0x20 MSTORE PUSH1 0x40 PUSH1 0x00 KECCAK256");
    }

    fn expr(&mut self, e: &Expr) {
        match e {
            Expr::Lit(n) => self.push(*n),
            Expr::True => self.push(1),
            Expr::Param(i) => {
                self.push(4 + 32 * *i as u64);
                self.emit("CALLDATALOAD");
            }
            Expr::Local(name) => {
                let a = self.local_addr(name);
                self.push(a);
                self.emit("MLOAD");
            }
            Expr::State(slot) => {
                self.push(*slot as u64);
                self.emit("SLOAD");
            }
            Expr::Balance => {
                self.balance_key();
                self.emit("SLOAD");
            }
            Expr::Sender => self.emit("CALLER"),
            Expr::Value => self.emit("CALLVALUE"),
            Expr::Timestamp => self.emit("TIMESTAMP"),
            Expr::Bin(op, a, b) => {
                self.expr(b);
                self.expr(a);
                let code = match *op {
                    "+" => "ADD",
                    "-" => "SUB",
                    "*" => "MUL",
                    "%" => "MOD",
                    "<" => "LT",
                    ">" => "GT",
                    "==" => "EQ",
                    ">=" => "LT ISZERO",
                    "<=" => "GT ISZERO",
                    "!=" => "EQ ISZERO",
                    other => unreachable!("operator {other}"),
                };
                self.emit(code);
            }
        }
    }

    fn compound(&mut self, op: &str) {
        self.emit(match op {
            "+=" => "ADD",
            "-=" => "SWAP1 SUB",
            _ => unreachable!("compound operator {op}"),
        });
    }

    fn stmt(&mut self, s: &Stmt) {
        match s {
            Stmt::Require(c) => {
                let ok = self.label("ok");
                self.expr(c);
                self.emit(format!("@{ok} JUMPI PUSH1 0x00 DUP1 REVERT"));
                self.place(&ok);
            }
            Stmt::Send(amount) => {
                let none = self.label("noreturn");
                let join = self.label("returned");
                self.emit("PUSH1 0x00 DUP1 PUSH1 0x00 DUP1");
                self.expr(amount);
                self.emit("CALLER GAS CALL");
                self.emit(format!("RETURNDATASIZE DUP1 PUSH1 0x00 DUP2 EQ @{none} JUMPI"));
                self.emit(format!("PUSH1 0x40 MLOAD SWAP1 POP RETURNDATASIZE PUSH1 0x00 PUSH1 0x40 MLOAD RETURNDATACOPY @{join} JUMP"));
                self.emit(format!("{none}: JUMPDEST POP"));
                self.place(&join);
                let a = self.local_addr("ok");
                self.push(a);
                self.emit("MSTORE");
            }
            Stmt::SetBalance(op, rhs) => {
                if *op == "=" {
                    self.expr(rhs);
                    self.balance_key();
                } else {
                    self.expr(rhs);
                    self.balance_key();
                    self.emit("DUP1 SLOAD DUP3");
                    self.compound(op);
                    self.emit("SWAP1 SWAP2 POP");
                }
                self.emit("SSTORE");
            }
            Stmt::SetState(slot, op, rhs) => {
                self.expr(rhs);
                if *op != "=" {
                    self.push(*slot as u64);
                    self.emit("SLOAD SWAP1");
                    self.compound(op);
                }
                self.push(*slot as u64);
                self.emit("SSTORE");
            }
            Stmt::Local(name, init) => {
                self.expr(init);
                let a = self.local_addr(name);
                self.push(a);
                self.emit("MSTORE");
            }
            Stmt::SetLocal(name, op, rhs) => {
                self.expr(rhs);
                let a = self.local_addr(name);
                self.push(a);
                self.emit("MLOAD SWAP1");
                self.compound(op);
                self.push(a);
                self.emit("MSTORE");
            }
            Stmt::If(c, body) => {
                let end = self.label("endif");
                self.expr(c);
                self.emit(format!("ISZERO @{end} JUMPI"));
                body.iter().for_each(|s| self.stmt(s));
                self.place(&end);
            }
            Stmt::While(c, body) => {
                let head = self.label("loop");
                let end = self.label("endloop");
                self.place(&head);
                self.expr(c);
                self.emit(format!("ISZERO @{end} JUMPI"));
                body.iter().for_each(|s| self.stmt(s));
                self.emit(format!("@{head} JUMP"));
                self.place(&end);
            }
            Stmt::For(var, bound, inc, body) => {
                self.stmt(&Stmt::Local(var, Expr::Lit(0)));
                let head = self.label("for");
                let end = self.label("endfor");
                self.place(&head);
                self.expr(&bin("<", Expr::Local(var), bound.clone()));
                self.emit(format!("ISZERO @{end} JUMPI"));
                body.iter().for_each(|s| self.stmt(s));
                if *inc {
                    self.stmt(&Stmt::SetLocal(var, "+=", Expr::Lit(1)));
                }
                self.emit(format!("@{head} JUMP"));
                self.place(&end);
            }
            Stmt::SelfCall(f, args) => {
                self.emit(format!("PUSH4 0x{:08x} PUSH1 0xe0 SHL PUSH1 0x00 MSTORE", self.selectors[*f]));
                for (i, a) in args.iter().enumerate() {
                    self.expr(a);
                    self.push(4 + 32 * i as u64);
                    self.emit("MSTORE");
                }
                self.emit("PUSH1 0x00 DUP1");
                self.push(4 + 32 * args.len() as u64);
                self.emit("PUSH1 0x00 PUSH1 0x00 ADDRESS GAS CALL POP");
            }
            Stmt::Return(e) => {
                self.expr(e);
                self.emit("PUSH1 0x00 MSTORE PUSH1 0x20 PUSH1 0x00 RETURN");
            }
        }
    }
}

fn render_asm(p: &Program, selectors: &[u32]) -> String {
    let mut w = AsmWriter { p, out: Vec::new(), labels: 0, locals: Vec::new(), selectors };
    w.emit("PUSH1 0x80 PUSH1 0x40 MSTORE");
    w.emit("PUSH1 0x04 CALLDATASIZE LT @fallback JUMPI");
    w.emit("PUSH1 0x00 CALLDATALOAD PUSH1 0xe0 SHR");
    for (i, sel) in selectors.iter().enumerate() {
        w.emit(format!("DUP1 PUSH4 0x{sel:08x} EQ @fn_{i} JUMPI"));
    }
    w.emit("fallback: JUMPDEST PUSH1 0x00 DUP1 REVERT");
    for (i, f) in w.p.funcs.iter().enumerate() {
        w.emit(format!("fn_{i}: JUMPDEST ; {}", f.name));
        w.locals.clear();
        f.body.iter().for_each(|s| w.stmt(s));
        if !matches!(f.body.last(), Some(Stmt::Return(_))) {
            w.emit("STOP");
        }
    }
    w.out.join("\n")
}

/// Appends a solc-style CBOR metadata trailer to `code`.
fn with_metadata(mut code: Vec<u8>, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut meta = vec![0xa2, 0x64];
    meta.extend_from_slice(b"ipfs");
    meta.extend_from_slice(&[0x58, 0x22, 0x12, 0x20]);
    meta.extend((0..32).map(|_| rng.gen::<u8>()));
    meta.push(0x64);
    meta.extend_from_slice(b"solc");
    meta.extend_from_slice(&[0x43, 0x00, 0x08, 0x13]);
    let len = meta.len() as u16;
    code.extend_from_slice(&meta);
    code.extend_from_slice(&len.to_be_bytes());
    code
}

// ---------------------------------------------------------------------------
// corpus

/// Shape of a generated corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub per_vulnerability: usize,
    /// Vulnerable contracts per vulnerability; the rest are safe variants.
    pub vulnerable_per_vulnerability: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { per_vulnerability: 60, vulnerable_per_vulnerability: 30 }
    }
}

fn contract_rng(seed: u64, v: Vulnerability, index: usize) -> ChaCha8Rng {
    let mix = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((v as u64) << 32)
        .wrapping_add(index as u64);
    ChaCha8Rng::seed_from_u64(mix)
}

/// Generates one contract; deterministic in `(seed, v, index, vulnerable)`.
pub fn generate_contract(seed: u64, v: Vulnerability, index: usize, vulnerable: bool) -> SynthContract {
    let mut rng = contract_rng(seed, v, index);
    let tag = if vulnerable { "v" } else { "s" };
    let contract_id = format!("{}-{index:04}-{tag}", v.name());
    let name = format!("C{}{index}", ["Re", "Ts", "Il"][v as usize]);
    let (template, program) = build_program(&mut rng, name, v, vulnerable);
    let selectors: Vec<u32> = program.funcs.iter().map(|_| rng.gen()).collect();
    let (solidity, ast_json) = render_ast(&program, &contract_id);
    let listing = render_asm(&program, &selectors);
    let code = assemble(&listing).expect("generated listing assembles");
    let code = with_metadata(code, &mut rng);
    SynthContract {
        contract_id,
        vulnerability: v,
        vulnerable,
        template,
        solidity,
        ast_json,
        bytecode_hex: format!("0x{}", hex::encode(code)),
    }
}

/// All contracts of a corpus, ordered by vulnerability then index.
pub fn generate_synthetic_corpus(spec: SynthSpec, seed: u64) -> Vec<SynthContract> {
    let mut out = Vec::with_capacity(spec.per_vulnerability * 3);
    for v in Vulnerability::ALL {
        for i in 0..spec.per_vulnerability {
            out.push(generate_contract(seed, v, i, i < spec.vulnerable_per_vulnerability));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    use crate::ast::ingest_ast;
    use crate::cfg::build_cfg;
    use crate::csg::build_contract_csg;
    use crate::evm::{decode, segment_blocks};
    use crate::patterns::{fired, match_bytecode_patterns, match_source_patterns, SubPattern};

    fn check_many(v: Vulnerability, vulnerable: bool, n: usize) -> Vec<SynthContract> {
        (0..n).map(|i| generate_contract(7, v, i, vulnerable)).collect()
    }

    #[test]
    fn src_offsets_slice_the_text() {
        let c = generate_contract(1, Vulnerability::Reentrancy, 0, true);
        let ast: Value = serde_json::from_str(&c.ast_json).unwrap();
        fn walk(v: &Value, text: &str) {
            if let Some(src) = v.get("src").and_then(Value::as_str) {
                let mut it = src.split(':').map(|x| x.parse::<usize>().unwrap());
                let (s, l) = (it.next().unwrap(), it.next().unwrap());
                assert!(s + l <= text.len(), "{src}");
                if let Some(name) = v.get("name").and_then(Value::as_str) {
                    if v["nodeType"] == "Identifier" {
                        assert_eq!(&text[s..s + l], name);
                    }
                }
            }
            match v {
                Value::Object(m) => m.values().for_each(|x| walk(x, text)),
                Value::Array(a) => a.iter().for_each(|x| walk(x, text)),
                _ => {}
            }
        }
        walk(&ast, &c.solidity);
        assert!(c.solidity.contains("msg.sender.call{value: "));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic_corpus(SynthSpec { per_vulnerability: 4, vulnerable_per_vulnerability: 2 }, 3);
        let b = generate_synthetic_corpus(SynthSpec { per_vulnerability: 4, vulnerable_per_vulnerability: 2 }, 3);
        assert_eq!(a.len(), 12);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.bytecode_hex, y.bytecode_hex);
            assert_eq!(x.ast_json, y.ast_json);
        }
        assert_eq!(a.iter().filter(|c| c.vulnerable).count(), 6);
    }

    fn source_fired(c: &SynthContract) -> BTreeSet<SubPattern> {
        let doc = ingest_ast(&c.ast_json).unwrap();
        assert_eq!(doc.source_unit_id, c.contract_id);
        let g = build_contract_csg(&doc);
        fired(&match_source_patterns(&g, &doc).unwrap())
    }

    fn bytecode_fired(c: &SynthContract) -> BTreeSet<SubPattern> {
        let blocks = segment_blocks(&decode(&c.bytecode_hex).unwrap());
        let cfg = build_cfg(&blocks, &c.contract_id);
        fired(&match_bytecode_patterns(&cfg, &blocks).unwrap())
    }

    fn signature(template: &str) -> &'static [SubPattern] {
        use SubPattern::*;
        match template {
            "call-before-update" => &[CallValueInvocation, BalanceDeduction, EnoughBalance],
            "unchecked-call-before-update" | "drain-then-zero" => &[CallValueInvocation, BalanceDeduction],
            "timestamp-lottery" | "stored-timestamp-branch" => {
                &[TimestampInvocation, TimestampAssign, TimestampContamination]
            }
            "timestamp-deadline" => &[TimestampInvocation, TimestampContamination],
            "while-true" | "missing-increment" => &[LoopStatement, LoopCondition],
            "unguarded-self-call" => &[SelfInvocation],
            other => panic!("no signature for {other}"),
        }
    }

    #[test]
    fn vulnerable_templates_fire_their_signature() {
        let mut seen = BTreeSet::new();
        for v in Vulnerability::ALL {
            for c in check_many(v, true, 15) {
                seen.insert(c.template);
                let sig = signature(c.template);
                let src = source_fired(&c);
                assert!(sig.iter().all(|p| src.contains(p)), "{} {} {src:?}", c.contract_id, c.template);
                let byt = bytecode_fired(&c);
                assert!(byt.contains(&sig[0]), "{} {} {byt:?}", c.contract_id, c.template);
            }
        }
        assert_eq!(seen.len(), 9);
    }

    #[test]
    fn safe_templates_never_complete_a_source_chain() {
        for v in Vulnerability::ALL {
            let chain = v.sub_patterns();
            for c in check_many(v, false, 12) {
                let fired = source_fired(&c);
                assert!(!chain.iter().all(|p| fired.contains(p)), "{} {} {fired:?}", c.contract_id, c.template);
            }
        }
    }

    #[test]
    fn metadata_trailer_is_strippable() {
        let c = generate_contract(2, Vulnerability::Timestamp, 1, false);
        let bytes = crate::evm::parse_hex(&c.bytecode_hex).unwrap();
        let (code, meta) = crate::evm::strip_metadata(&bytes);
        assert!(meta.is_some());
        assert!(code.len() + 53 <= bytes.len());
    }
}
