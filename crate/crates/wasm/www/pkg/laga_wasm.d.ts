/* tslint:disable */
/* eslint-disable */

/**
 * Louvain partition of an SBM graph with the given block probabilities.
 * Returns JSON with per-node class and community plus the edge list.
 */
export function communities(nodes: number, classes: number, p_in: number, p_out: number, seed: bigint): string;

/**
 * Loss weights for mean text, structure and label severities. Returns
 * `[alpha, beta, gamma]`.
 */
export function loss_weights(text: number, structure: number, label: number, eta: number): Float64Array;

/**
 * Degrade an SBM graph with one scenario and diagnose both versions.
 * Returns JSON.
 */
export function perturb_and_detect(kind: string, ratio: number, nodes: number, classes: number, seed: bigint): string;

export function start(): void;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly communities: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly loss_weights: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly perturb_and_detect: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
    readonly start: () => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
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
