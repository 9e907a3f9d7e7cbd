/**
 * Line-delimited JSON client for the engine's stdio interface.
 *
 * One request per line with a monotonically increasing id; responses are
 * matched back by that id, so callers can pipeline freely while per-call
 * promises stay in order.
 */

import { spawn, type ChildProcessWithoutNullStreams } from "node:child_process";
import { createInterface, type Interface } from "node:readline";
import { EngineError, ScopePermissionError, UsageError } from "./types.js";

interface Response {
  id: number | null;
  ok: boolean;
  result?: unknown;
  error?: { type: string; message: string };
}

export const DEFAULT_COMMAND = ["python3", "-m", "agentmem", "serve", "--stdio"];

export class EngineProcess {
  private proc: ChildProcessWithoutNullStreams;
  private lines: Interface;
  private nextId = 1;
  private pending = new Map<number, { resolve: (v: unknown) => void; reject: (e: Error) => void }>();
  private closed = false;

  constructor(command: string[] = DEFAULT_COMMAND) {
    this.proc = spawn(command[0], command.slice(1), { stdio: ["pipe", "pipe", "pipe"] });
    this.lines = createInterface({ input: this.proc.stdout });
    this.lines.on("line", (line) => this.onLine(line));
    this.proc.on("exit", () => this.failAll(new EngineError("engine process exited")));
    this.proc.on("error", (err) => this.failAll(new EngineError(String(err))));
  }

  private onLine(line: string) {
    let msg: Response;
    try {
      msg = JSON.parse(line) as Response;
    } catch {
      return; // stray diagnostics are not protocol traffic
    }
    if (msg.id == null) return;
    const waiter = this.pending.get(msg.id);
    if (!waiter) return;
    this.pending.delete(msg.id);
    if (msg.ok) {
      waiter.resolve(msg.result);
    } else {
      const { type, message } = msg.error ?? { type: "engine", message: "unknown error" };
      if (type === "permission") waiter.reject(new ScopePermissionError(message));
      else if (type === "usage" || type === "parse") waiter.reject(new UsageError(message));
      else waiter.reject(new EngineError(message));
    }
  }

  private failAll(err: Error) {
    if (this.closed) return;
    this.closed = true;
    for (const waiter of this.pending.values()) waiter.reject(err);
    this.pending.clear();
  }

  request<T>(op: string, args: Record<string, unknown> = {}): Promise<T> {
    if (this.closed) return Promise.reject(new EngineError("engine already closed"));
    const id = this.nextId++;
    const payload = JSON.stringify({ id, op, ...args });
    return new Promise<T>((resolve, reject) => {
      this.pending.set(id, { resolve: resolve as (v: unknown) => void, reject });
      this.proc.stdin.write(payload + "\n");
    });
  }

  async shutdown(): Promise<void> {
    if (this.closed) return;
    try {
      await this.request("close");
    } catch {
      // the process may already be gone
    }
    this.closed = true;
    this.proc.stdin.end();
    this.lines.close();
    if (this.proc.exitCode == null) {
      await new Promise<void>((resolve) => {
        const timer = setTimeout(() => {
          this.proc.kill();
          resolve();
        }, 2000);
        this.proc.once("exit", () => {
          clearTimeout(timer);
          resolve();
        });
      });
    }
  }
}
