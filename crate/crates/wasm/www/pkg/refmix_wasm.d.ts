/* tslint:disable */
/* eslint-disable */

/**
 * Head-averaged attention weights of target tokens over
 * `[target; source]` keys.
 */
export class Heatmap {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    cols(): number;
    rows(): number;
    /**
     * Row-major, `rows × cols`.
     */
    values(): Float64Array;
}

export function attentionHeatmap(seed: number, target_tokens: number, source_tokens: number, temperature: number): Heatmap;

export function demoSide(): number;

export function dualBranch(target_prompt: string, source_prompt: string, mixing: boolean, seed: number, steps: number): Uint8Array;

export function encodeLayout(grids: string, scheme: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_heatmap_free: (a: number, b: number) => void;
    readonly attentionHeatmap: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly demoSide: () => number;
    readonly dualBranch: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly encodeLayout: (a: number, b: number, c: number) => [number, number, number, number];
    readonly heatmap_cols: (a: number) => number;
    readonly heatmap_rows: (a: number) => number;
    readonly heatmap_values: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
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
