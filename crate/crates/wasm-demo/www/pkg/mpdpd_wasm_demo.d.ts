/* tslint:disable */
/* eslint-disable */

/**
 * Interleaved `[x, err]` of the CORDIC activation minus the libm reference
 * over `[-4, 4]`. `func` is `"tanh"` or `"sigmoid"`.
 */
export function cordic_error_curve(func: string, iterations: number, internal_width_bits: number, points: number): Float64Array;

/**
 * Largest absolute value in the odd slots of an interleaved curve.
 */
export function max_abs_error(curve: Float64Array): number;

/**
 * Interleaved `[r_in, r_out, phase_deg]` of the default PA's memoryless
 * response, for input amplitudes up to `drive` (full scale is 1).
 */
export function pa_am_curves(drive: number, points: number): Float64Array;

/**
 * Interleaved `[x0, q0, x1, q1, ...]` of the fake-quantizer staircase over
 * `[lo, hi]`. Empty when the spec is invalid.
 */
export function quantizer_curve(n_bits: number, signed: boolean, scale_log2: number, lo: number, hi: number, points: number): Float64Array;

/**
 * `[step, q_min * step, q_max * step]` of a quantizer, or empty if invalid.
 */
export function quantizer_range(n_bits: number, signed: boolean, scale_log2: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly cordic_error_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly max_abs_error: (a: number, b: number) => number;
    readonly pa_am_curves: (a: number, b: number) => [number, number];
    readonly quantizer_curve: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
    readonly quantizer_range: (a: number, b: number, c: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
