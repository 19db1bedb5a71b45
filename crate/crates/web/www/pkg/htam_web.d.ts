/* tslint:disable */
/* eslint-disable */

/**
 * A bank plus a campaign counter, so successive simulations keep learning.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    edges(): string;
    /**
     * `[[id, label], …]`.
     */
    globals(): string;
    constructor();
    /**
     * `prefix` is a JSON array of direction ids.
     */
    policyDistribution(prefix: string, epsilon: number, tau: number, lambda: number, failed_before: boolean): string;
    reset(): void;
    /**
     * `ablation` is one of `full`, `freeze`, `no-prefix`, `flat-alpha`.
     */
    simulateRun(tasks: number, steps: number, seed: bigint, lambda: number, ablation: string): string;
}

export function alpha_curve(len: number, lambda: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly alpha_curve: (a: number, b: number) => [number, number, number, number];
    readonly demo_edges: (a: number) => [number, number];
    readonly demo_globals: (a: number) => [number, number];
    readonly demo_new: () => number;
    readonly demo_policyDistribution: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly demo_reset: (a: number) => void;
    readonly demo_simulateRun: (a: number, b: number, c: number, d: bigint, e: number, f: number, g: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
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
