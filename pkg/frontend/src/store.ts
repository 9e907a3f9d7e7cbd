/**
 * Store / Agent surface over a spawned engine process.
 *
 * Every call returns a promise (the engine batches and serializes per agent
 * on its side); vectors cross the boundary as plain number arrays and are
 * stored as float32.
 */

import { DEFAULT_COMMAND, EngineProcess } from "./proto.js";
import {
  type ItemRecord,
  type Scope,
  type SearchHit,
  type SearchOptions,
  type SearchResult,
  STATIC_SCOPE,
  type StoreOptions,
} from "./types.js";

interface WireSearch {
  ids: number[];
  distances: number[];
  scopes: string[];
  stats: SearchResult["stats"];
}

function toResult(raw: WireSearch): SearchResult {
  const hits: SearchHit[] = raw.ids.map((id, i) => ({
    id,
    distance: raw.distances[i],
    scope: raw.scopes[i],
  }));
  return { hits, stats: raw.stats };
}

export class Store {
  private constructor(
    private engine: EngineProcess,
    readonly dimension: number,
    readonly seed: number,
  ) {}

  static async open(options: StoreOptions): Promise<Store> {
    const engine = new EngineProcess(options.command ?? DEFAULT_COMMAND);
    const cfg: Record<string, unknown> = {
      dimension: options.dimension,
      ...(options.metric ? { metric: options.metric } : {}),
      ...(options.seed !== undefined ? { seed: options.seed } : {}),
      ...(options.config ?? {}),
    };
    try {
      const res = await engine.request<{ seed: number }>("create", { cfg });
      return new Store(engine, options.dimension, res.seed);
    } catch (err) {
      await engine.shutdown();
      throw err;
    }
  }

  async registerAgent(agentId: string): Promise<Agent> {
    await this.engine.request("register_agent", { agent: agentId });
    return new Agent(this, agentId);
  }

  async unregisterAgent(agentId: string): Promise<void> {
    await this.engine.request("unregister_agent", { agent: agentId });
  }

  search(
    agent: string | null,
    vector: number[],
    options: SearchOptions = {},
  ): Promise<SearchResult> {
    return this.engine
      .request<WireSearch>("search", {
        kind: "search",
        agent,
        scopes: options.scopes ?? [STATIC_SCOPE],
        vector,
        k: options.k ?? 5,
        ...(options.nprobe !== undefined ? { nprobe: options.nprobe } : {}),
      })
      .then(toResult);
  }

  insert(
    agent: string | null,
    scope: Scope,
    vectors: number[][],
    payloads?: string[],
  ): Promise<number[]> {
    return this.engine
      .request<{ ids: number[] }>("insert", {
        kind: "insert",
        agent,
        scope,
        vectors,
        ...(payloads ? { payloads } : {}),
      })
      .then((r) => r.ids);
  }

  update(
    agent: string | null,
    item: number,
    changes: { vector?: number[]; payload?: string },
  ): Promise<boolean> {
    return this.engine
      .request<{ updated: boolean }>("update", { kind: "update", agent, item, ...changes })
      .then((r) => r.updated);
  }

  delete(agent: string | null, item: number): Promise<boolean> {
    return this.engine
      .request<{ deleted: boolean }>("delete", { kind: "delete", agent, item })
      .then((r) => r.deleted);
  }

  async endRequest(agent: string): Promise<void> {
    await this.engine.request("end_request", { kind: "end_request", agent });
  }

  async getItem(item: number): Promise<ItemRecord | null> {
    const res = await this.engine.request<{ found: boolean } & ItemRecord>("get", { item });
    return res.found ? { vector: res.vector, payload: res.payload, scope: res.scope } : null;
  }

  stats(): Promise<{ live: number; clusters: number; scopes: string[] }> {
    return this.engine.request("stats");
  }

  async snapshot(path: string): Promise<void> {
    await this.engine.request("snapshot", { path });
  }

  async close(): Promise<void> {
    await this.engine.shutdown();
  }
}

/** Convenience handle binding an agent id to its own scope. */
export class Agent {
  constructor(
    readonly store: Store,
    readonly id: string,
  ) {}

  get scope(): Scope {
    return this.id;
  }

  search(vector: number[], options: SearchOptions = {}): Promise<SearchResult> {
    return this.store.search(this.id, vector, {
      scopes: options.scopes ?? [this.id, STATIC_SCOPE],
      ...options,
    });
  }

  insert(vectors: number[][], payloads?: string[]): Promise<number[]> {
    return this.store.insert(this.id, this.id, vectors, payloads);
  }

  update(item: number, changes: { vector?: number[]; payload?: string }): Promise<boolean> {
    return this.store.update(this.id, item, changes);
  }

  delete(item: number): Promise<boolean> {
    return this.store.delete(this.id, item);
  }

  endRequest(): Promise<void> {
    return this.store.endRequest(this.id);
  }
}
