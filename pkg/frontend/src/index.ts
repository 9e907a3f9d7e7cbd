export { Agent, Store } from "./store.js";
export {
  EngineError,
  type ItemRecord,
  type Scope,
  ScopePermissionError,
  type SearchHit,
  type SearchOptions,
  type SearchResult,
  type SearchStats,
  STATIC_SCOPE,
  type StoreOptions,
  UsageError,
} from "./types.js";
