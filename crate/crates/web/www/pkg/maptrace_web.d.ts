/* tslint:disable */
/* eslint-disable */

/**
 * Compiles `src` and reports the code size, functions and how many
 * location records each function's maps carry.
 */
export function compile_program(src: string): string;

/**
 * Halts like [`trace_program`] and lists unreachable live chunks.
 */
export function leakcheck_program(src: string, seed: bigint, stop: bigint): string;

/**
 * Halts the program at `stop` (0 = end of main) and traces it.
 */
export function trace_program(src: string, seed: bigint, stop: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly compile_program: (a: number, b: number) => [number, number];
    readonly leakcheck_program: (a: number, b: number, c: bigint, d: bigint) => [number, number];
    readonly trace_program: (a: number, b: number, c: bigint, d: bigint) => [number, number];
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
