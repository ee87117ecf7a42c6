/* tslint:disable */
/* eslint-disable */

/**
 * A basis fed from a stream of vectors clustered around one of several
 * random subspaces; switching clusters mimics a task change.
 */
export class BasisDemo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Feeds `count` samples of the current cluster through the same
     * expand-then-update sequence a selected unit goes through.
     */
    feed(count: number): string;
    constructor(dim: number, capacity: number, initial_max_age: number, aging_rate: number, expand_threshold: number, seed: number);
    set_cluster(cluster: number): void;
    state(): string;
}

/**
 * A small routed network over hand-drawn `GRID x GRID` images.
 */
export class RouteDemo {
    free(): void;
    [Symbol.dispose](): void;
    constructor(units: number, depth: number, empty_threshold: number, seed: number);
    /**
     * Routes one image given as `GRID * GRID` row-major intensities.
     * Training mode may initialize, expand and age bases; evaluation
     * mode only reads them.
     */
    route(pixels: Float32Array, train: boolean): string;
    /**
     * Basis fill per unit and train-mode usage counts per level.
     */
    summary(): string;
}

/**
 * Monte-Carlo check of the hashing trick for each output size in `dims`
 * (comma separated): bias of `phi(a)^T phi(b)` and its variance.
 */
export function hash_explorer(dims: string, n: number, trials: number, seed: number): string;

/**
 * A noisy stroke pattern from one of a few fixed shapes, for quick testing.
 */
export function preset(shape: number, seed: number): Float32Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_basisdemo_free: (a: number, b: number) => void;
    readonly __wbg_routedemo_free: (a: number, b: number) => void;
    readonly basisdemo_feed: (a: number, b: number) => [number, number];
    readonly basisdemo_new: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly basisdemo_set_cluster: (a: number, b: number) => [number, number];
    readonly basisdemo_state: (a: number) => [number, number];
    readonly hash_explorer: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly preset: (a: number, b: number) => [number, number];
    readonly routedemo_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly routedemo_route: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly routedemo_summary: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
