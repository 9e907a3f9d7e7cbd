export type Scope = string;

export const STATIC_SCOPE: Scope = "static";

export interface StoreOptions {
  dimension: number;
  metric?: "sq_l2" | "ip" | "cosine";
  seed?: number;
  /** Extra engine config keys passed through verbatim. */
  config?: Record<string, unknown>;
  /** Command used to launch the engine process. */
  command?: string[];
}

export interface SearchOptions {
  k?: number;
  scopes?: Scope[];
  nprobe?: number;
}

export interface SearchStats {
  scanned: number;
  coarse: number;
  level: "L0" | "L1" | "L2";
  early: boolean;
}

export interface SearchHit {
  id: number;
  distance: number;
  scope: Scope;
}

export interface SearchResult {
  hits: SearchHit[];
  stats: SearchStats;
}

export interface ItemRecord {
  vector: number[];
  payload: string;
  scope: Scope;
}

/** Engine rejected the request (bad arguments, unknown scope, ...). */
export class UsageError extends Error {}

/** Write attempted on a scope the agent may not modify. */
export class ScopePermissionError extends UsageError {}

export class EngineError extends Error {}
