/* tslint:disable */
/* eslint-disable */

/**
 * A two-lobe bubble whose lower lobe is shifted by `dx` and whose text
 * blocks are `gap` pixels apart; returns its paragraph split.
 */
export function bubble_split(dx: number, gap: number, upper_columns: number, lower_columns: number): string;

/**
 * Fits `text` into an elliptical bubble of the given size.
 */
export function fit_lettering(text: string, width: number, height: number): string;

/**
 * A random layout with its estimated frame ranks and text order next to
 * the generator's ground truth.
 */
export function reading_order(seed: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly bubble_split: (a: number, b: number, c: number, d: number) => [number, number];
    readonly fit_lettering: (a: number, b: number, c: number, d: number) => [number, number];
    readonly reading_order: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
